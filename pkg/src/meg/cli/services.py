"""``meg-server`` and ``meg-mail``: run the broker or the mail provider."""

from __future__ import annotations

import argparse
import logging

from .. import mailsim, server
from ..api import MailAPI
from ..broker import Broker, ServerConfig
from ..errors import MegError
from ..httpkit import ServiceThread, split_addr
from . import add_verbose, setup_logging

log = logging.getLogger("meg.server")


def _serve(service: ServiceThread, what: str) -> int:
    print(f"{what} listening on {service.url}", flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.httpd.server_close()
    return 0


def server_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="meg-server", description="MEG keystore and message broker")
    parser.add_argument("--addr", help="host:port (default: $MEG_SERVER_ADDR or 127.0.0.1:8780)")
    parser.add_argument("--journal", help="append-only journal path (default: $MEG_JOURNAL_PATH)")
    add_verbose(parser)
    args = parser.parse_args(argv)
    setup_logging(args.verbose + 1)

    cfg = ServerConfig.from_env()
    if args.addr:
        cfg.addr = args.addr
    if args.journal:
        cfg.journal_path = args.journal
    mail = MailAPI(mailsim.mail_addr_from_env())

    def mailer(to: str, sender: str, subject: str, body: str) -> None:
        try:
            mail.send(to, sender, subject, body)
        except MegError as exc:
            log.error("could not deliver mail to %s: %s", to, exc.message)

    broker = Broker(cfg, mailer=mailer)
    host, port = split_addr(cfg.addr, 8780)
    return _serve(ServiceThread(server.build_app(broker), host, port), "meg-server")


def mail_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="meg-mail", description="in-memory mail provider for MEG")
    parser.add_argument("--addr", help="host:port (default: $MEG_MAIL_ADDR or 127.0.0.1:8781)")
    add_verbose(parser)
    args = parser.parse_args(argv)
    setup_logging(args.verbose + 1)
    host, port = split_addr(args.addr or mailsim.mail_addr_from_env(), 8781)
    return _serve(ServiceThread(mailsim.build_app(mailsim.MailStore()), host, port), "meg-mail")
