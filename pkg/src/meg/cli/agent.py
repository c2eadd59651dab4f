"""``meg-agent``: the simulated phone app.

``run`` keeps the key unlocked in memory and serves tasks. While it runs,
``lock`` and ``unlock`` talk to it over a Unix socket in the agent home,
standing in for the user closing and reopening the app.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import socket
import socketserver
import threading
from pathlib import Path

from ..agent import Agent, agent_home_from_env
from ..crypto import UserIdentity
from ..errors import MegError
from ..httpkit import as_url
from . import add_verbose, fail, read_password, setup_logging

log = logging.getLogger("meg.agent")

CONTROL_SOCKET = "control.sock"


def _server_url() -> str:
    return as_url(os.environ.get("MEG_SERVER_ADDR", "127.0.0.1:8780"))


class _Control(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True

    def __init__(self, path: Path, agent: Agent):
        self.agent = agent
        super().__init__(str(path), _ControlHandler)


class _ControlHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        agent: Agent = self.server.agent
        try:
            msg = json.loads(self.rfile.readline() or b"{}")
            cmd = msg.get("cmd")
            if cmd == "lock":
                agent.close_app()
                reply = {"ok": True, "unlocked": False}
            elif cmd == "unlock":
                agent.open_app(str(msg.get("password", "")))
                reply = {"ok": True, "unlocked": True}
            elif cmd == "status":
                reply = {"ok": True, "unlocked": agent.unlocked}
            else:
                reply = {"ok": False, "error": {"code": "invalid-argument", "message": f"unknown command {cmd!r}"}}
        except MegError as exc:
            reply = {"ok": False, "error": exc.to_dict()}
        except ValueError:
            reply = {"ok": False, "error": {"code": "parse-error", "message": "bad control message"}}
        self.wfile.write(json.dumps(reply).encode() + b"\n")


def send_control(home: Path, message: dict, timeout: float = 10.0) -> dict:
    path = home / CONTROL_SOCKET
    with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
        sock.settimeout(timeout)
        try:
            sock.connect(str(path))
        except OSError:
            raise MegError(f"no running agent at {path}", code="agent-not-running") from None
        sock.sendall(json.dumps(message).encode() + b"\n")
        data = sock.makefile("rb").readline()
    reply = json.loads(data or b"{}")
    if not reply.get("ok"):
        err = reply.get("error") or {}
        raise MegError(err.get("message", "control command failed"), code=err.get("code"))
    return reply


def _cmd_enroll(args: argparse.Namespace, agent: Agent) -> int:
    identity = UserIdentity(args.first, args.last, args.phone, args.email)
    password = read_password("Choose a password: ", confirm=True)
    st = agent.enroll(identity, password)
    print(f"enrolled {identity.user_id}")
    print(f"fingerprint {st.keypair.fingerprint.hex}")
    print(f"device {st.device_id}")
    return 0


def _cmd_pair(args: argparse.Namespace, agent: Agent) -> int:
    agent.open_app(read_password())
    out = agent.pair(args.qr)
    print(f"paired client {out['client_id']}")
    return 0


def _cmd_run(args: argparse.Namespace, agent: Agent) -> int:
    agent.open_app(read_password())
    sock_path = agent.home / CONTROL_SOCKET
    sock_path.unlink(missing_ok=True)
    old_umask = os.umask(0o177)
    try:
        control = _Control(sock_path, agent)
    finally:
        os.umask(old_umask)
    threading.Thread(target=control.serve_forever, name="agent-control", daemon=True).start()
    signal.signal(signal.SIGTERM, lambda *_: agent.shutdown())
    print(f"agent running for {agent.state.email}", flush=True)
    try:
        n = agent.run_loop(args.max_tasks, wait_s=args.wait)
    except KeyboardInterrupt:
        n = None
    finally:
        control.shutdown()
        control.server_close()
        sock_path.unlink(missing_ok=True)
        agent.close_app()
    if n is not None:
        print(f"processed {n} task(s)")
    return 0


def _cmd_lock(args: argparse.Namespace, home: Path) -> int:
    send_control(home, {"cmd": "lock"})
    print("locked")
    return 0


def _cmd_unlock(args: argparse.Namespace, home: Path) -> int:
    send_control(home, {"cmd": "unlock", "password": read_password()})
    print("unlocked")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meg-agent", description="MEG gateway agent (simulated phone)")
    parser.add_argument("--home", help="state directory (default: $MEG_AGENT_HOME or .meg-agent)")
    parser.add_argument("--server", help="broker address (default: $MEG_SERVER_ADDR)")
    add_verbose(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enroll", help="create a key pair and publish the public key")
    p.add_argument("--first", required=True)
    p.add_argument("--last", required=True)
    p.add_argument("--phone", required=True)
    p.add_argument("--email", required=True)

    p = sub.add_parser("pair", help="scan a client's pairing code")
    p.add_argument("--qr", required=True, help="QR PNG path, JSON file, or the payload text itself")

    p = sub.add_parser("run", help="serve encryption tasks")
    p.add_argument("--max-tasks", type=int, default=None)
    p.add_argument("--wait", type=float, default=5.0, help="long-poll wait in seconds")

    sub.add_parser("lock", help="close the app on a running agent")
    sub.add_parser("unlock", help="reopen the app on a running agent")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    home = Path(args.home) if args.home else agent_home_from_env()
    try:
        if args.command == "lock":
            return _cmd_lock(args, home)
        if args.command == "unlock":
            return _cmd_unlock(args, home)
        agent = Agent(as_url(args.server) if args.server else _server_url(), home)
        handler = {"enroll": _cmd_enroll, "pair": _cmd_pair, "run": _cmd_run}[args.command]
        return handler(args, agent)
    except MegError as exc:
        return fail(exc)


if __name__ == "__main__":
    raise SystemExit(main())
