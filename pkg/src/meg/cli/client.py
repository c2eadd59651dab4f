"""``meg-client``: the email-client plugin from a terminal."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from ..client import Client, OutgoingEmail, client_home_from_env, is_meg_message
from ..errors import MegError
from ..httpkit import as_url
from ..mailsim import mail_addr_from_env
from . import add_verbose, fail, setup_logging


def _cmd_pair_qr(args: argparse.Namespace, client: Client) -> int:
    payload = client.init_pairing(args.out)
    if args.out:
        print(f"pairing code written to {args.out}")
    else:
        print(payload.to_json())
    print(f"scan it with: meg-agent pair --qr {args.out or '<payload>'}", file=sys.stderr)
    return 0


def _read_body(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _cmd_send(args: argparse.Namespace, client: Client) -> int:
    mail = OutgoingEmail(tuple(args.to), args.subject, _read_body(args.body_file), encrypt=args.encrypt)
    report = client.send_email(mail)
    if report.status == "invited":
        print(f"not sent: no MEG key for {', '.join(report.invited)}; invitation sent")
        return 2
    print(f"{report.status}: {', '.join(report.message_ids)}")
    return 0


def _cmd_inbox(args: argparse.Namespace, client: Client) -> int:
    for mail in client.inbox():
        print(f"Message-Id: {mail.id}")
        print(f"From: {mail.sender}")
        print(f"Subject: {mail.subject}")
        body = mail.body
        if args.decrypt and is_meg_message(mail):
            try:
                shown = client.receive_email(mail)
                body = shown.body
                print(f"X-MEG-Verified-Sender: {shown.verified_sender}")
            except MegError as exc:
                body = f"[{exc.code}] {exc.message}"
        print()
        print(body.rstrip("\n"))
        print()
    return 0


def _cmd_revoke_request(args: argparse.Namespace, client: Client) -> int:
    client.revoke_my_key()
    print(f"confirmation token mailed to {client.account_email}")
    return 0


def _cmd_revoke_confirm(args: argparse.Namespace, client: Client) -> int:
    client.complete_revocation(args.token)
    print("key revoked")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meg-client", description="MEG email-client plugin")
    parser.add_argument("--home", help="state directory (default: $MEG_CLIENT_HOME or .meg-client)")
    parser.add_argument("--account", help="your email address (needed before pairing)")
    parser.add_argument("--server", help="broker address (default: $MEG_SERVER_ADDR)")
    parser.add_argument("--mail", help="mail provider address (default: $MEG_MAIL_ADDR)")
    parser.add_argument("--timeout", type=float, default=30.0, help="seconds to wait for the phone")
    add_verbose(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pair-qr", help="show the pairing code for the phone")
    p.add_argument("--out", help="write a QR PNG here instead of printing the payload")

    p = sub.add_parser("send", help="send an email")
    p.add_argument("--to", action="append", required=True, help="recipient (repeatable)")
    p.add_argument("--subject", default="")
    p.add_argument("--body-file", required=True, help="file with the body, or - for stdin")
    p.add_argument("--encrypt", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("inbox", help="list received mail")
    p.add_argument("--decrypt", action="store_true", help="decrypt MEG mail on the phone for display")

    sub.add_parser("revoke-request", help="ask the server to revoke your key")
    p = sub.add_parser("revoke-confirm", help="confirm revocation with the mailed token")
    p.add_argument("--token", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    home = Path(args.home) if args.home else client_home_from_env()
    server = as_url(args.server or os.environ.get("MEG_SERVER_ADDR", "127.0.0.1:8780"))
    mail = as_url(args.mail or mail_addr_from_env())
    client = Client(args.account or "", server, mail, home, poll_timeout=args.timeout)
    if not client.account_email:
        print("error [invalid-argument]: --account is required until the client is set up", file=sys.stderr)
        return 1
    handlers = {
        "pair-qr": _cmd_pair_qr,
        "send": _cmd_send,
        "inbox": _cmd_inbox,
        "revoke-request": _cmd_revoke_request,
        "revoke-confirm": _cmd_revoke_confirm,
    }
    try:
        return handlers[args.command](args, client)
    except MegError as exc:
        return fail(exc)


if __name__ == "__main__":
    raise SystemExit(main())
