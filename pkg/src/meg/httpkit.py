"""Tiny JSON-over-HTTP/1.1 plumbing on top of :mod:`http.server`.

Threaded on purpose: long-poll handlers block a worker thread each.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import parse_qs, urlsplit

from .errors import MegError, http_status_for

log = logging.getLogger(__name__)

MAX_BODY = 16 * 1024 * 1024


@dataclass
class Request:
    method: str
    path: str
    params: dict[str, str]
    query: dict[str, str]
    body: Any
    received_at: float = 0.0
    after_send: list[Callable[[float], None]] = field(default_factory=list)

    def field(self, name: str) -> Any:
        if not isinstance(self.body, dict) or name not in self.body:
            raise MegError(f"missing field {name!r}", code="invalid-argument")
        return self.body[name]

    def arg(self, name: str) -> str:
        if name not in self.query:
            raise MegError(f"missing query parameter {name!r}", code="invalid-argument")
        return self.query[name]


Handler = Callable[[Request], Any]


class JsonApp:
    def __init__(self, name: str):
        self.name = name
        self._routes: list[tuple[str, re.Pattern[str], Handler]] = []

    def route(self, method: str, path: str) -> Callable[[Handler], Handler]:
        pattern = re.compile("^" + re.sub(r"\{(\w+)\}", r"(?P<\1>[^/]+)", path) + "$")

        def deco(fn: Handler) -> Handler:
            self._routes.append((method, pattern, fn))
            return fn

        return deco

    def dispatch(self, method: str, raw_path: str, body: Any, req: Request | None = None) -> tuple[int, Any]:
        parts = urlsplit(raw_path)
        query = {k: v[-1] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
        allowed = False
        for m, pattern, fn in self._routes:
            match = pattern.match(parts.path)
            if match is None:
                continue
            allowed = True
            if m != method:
                continue
            if req is None:
                req = Request(method, parts.path, {}, {}, body, time.perf_counter())
            req.method, req.path, req.params, req.query, req.body = method, parts.path, match.groupdict(), query, body
            try:
                return 200, fn(req)
            except MegError as exc:
                return http_status_for(exc.code), {"error": exc.to_dict()}
            except Exception:
                log.exception("%s: unhandled error on %s %s", self.name, method, parts.path)
                return 500, {"error": {"code": "internal-error", "message": "internal server error"}}
        if allowed:
            return 405, {"error": {"code": "method-not-allowed", "message": method}}
        return 404, {"error": {"code": "no-route", "message": parts.path}}


def _make_handler(app: JsonApp) -> type[BaseHTTPRequestHandler]:
    class _Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        disable_nagle_algorithm = True
        server_version = app.name

        def parse_request(self) -> bool:
            # the request line has just been read off the socket
            self._received_at = time.perf_counter()
            return super().parse_request()

        def _run(self) -> None:
            req = Request(self.command, self.path, {}, {}, None, getattr(self, "_received_at", time.perf_counter()))
            body: Any = None
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY:
                self._send(413, {"error": {"code": "too-large", "message": "request body too large"}})
                return
            if length:
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw)
                except (ValueError, UnicodeDecodeError):
                    self._send(400, {"error": {"code": "parse-error", "message": "body is not JSON"}})
                    return
            status, payload = app.dispatch(self.command, self.path, body, req)
            self._send(status, payload)
            sent = time.perf_counter()
            for fn in req.after_send:
                fn(sent)

        def _send(self, status: int, payload: Any) -> None:
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            # headers and body in one segment
            self._headers_buffer.append(b"\r\n" + data)
            self.flush_headers()

        do_GET = do_POST = do_PUT = do_DELETE = _run

        def log_message(self, fmt: str, *args: Any) -> None:
            log.debug("%s %s", app.name, fmt % args)

    return _Handler


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True


class ServiceThread:
    """Serve a :class:`JsonApp` from a background thread.

    Port 0 picks a free port; read the bound address from :attr:`url`.
    """

    def __init__(self, app: JsonApp, host: str = "127.0.0.1", port: int = 0):
        self.app = app
        self.httpd = _Server((host, port), _make_handler(app))
        self._thread = threading.Thread(target=self.httpd.serve_forever, name=f"{app.name}-http", daemon=True)

    @property
    def address(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"{host}:{port}"

    @property
    def url(self) -> str:
        return f"http://{self.address}"

    def start(self) -> "ServiceThread":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "ServiceThread":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()


def split_addr(addr: str, default_port: int) -> tuple[str, int]:
    addr = addr.removeprefix("http://")
    host, _, port = addr.rpartition(":")
    if not host:
        return addr, default_port
    return host, int(port)


def as_url(addr: str) -> str:
    return addr if addr.startswith(("http://", "https://")) else f"http://{addr}"
