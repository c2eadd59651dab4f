"""In-memory mail provider with a JSON HTTP front end.

Stands in for the webmail provider: it stores whatever it is handed and
serves copies back. Nothing here ever decrypts.
"""

from __future__ import annotations

import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import InvalidArgument
from .httpkit import JsonApp, Request

DEFAULT_MAIL_ADDR = "127.0.0.1:8781"


def _valid_address(addr: str) -> bool:
    if not isinstance(addr, str) or addr.count("@") != 1 or any(c.isspace() for c in addr):
        return False
    local, domain = addr.split("@")
    return bool(local) and bool(domain)


@dataclass(frozen=True)
class StoredMail:
    id: str
    to: str
    sender: str
    headers: tuple[tuple[str, str], ...]
    body: str
    received_at: float

    def header(self, name: str, default: str | None = None) -> str | None:
        lname = name.lower()
        for k, v in self.headers:
            if k.lower() == lname:
                return v
        return default

    @property
    def subject(self) -> str:
        return self.header("Subject", "") or ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "to": self.to,
            "from": self.sender,
            "headers": [list(h) for h in self.headers],
            "body": self.body,
            "received_at": self.received_at,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StoredMail":
        return cls(
            id=data["id"],
            to=data["to"],
            sender=data["from"],
            headers=tuple((str(k), str(v)) for k, v in data.get("headers", [])),
            body=data["body"],
            received_at=float(data["received_at"]),
        )

    def to_rfc5322(self) -> str:
        lines = [f"From: {self.sender}", f"To: {self.to}"]
        lines += [f"{k}: {v}" for k, v in self.headers if k.lower() not in ("from", "to")]
        return "\r\n".join(lines) + "\r\n\r\n" + self.body


@dataclass
class MailStore:
    clock: Callable[[], float] = time.time
    _boxes: dict[str, list[StoredMail]] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def deliver(
        self,
        to: str,
        sender: str,
        body: str,
        headers: list[tuple[str, str]] | tuple[tuple[str, str], ...] = (),
    ) -> str:
        if not _valid_address(to):
            raise InvalidArgument(f"bad recipient address {to!r}")
        if not _valid_address(sender):
            raise InvalidArgument(f"bad sender address {sender!r}")
        if not isinstance(body, str):
            raise InvalidArgument("body must be text")
        with self._lock:
            box = self._boxes.setdefault(to, [])
            # keep per-box timestamps non-decreasing even if the clock steps back
            now = max(self.clock(), box[-1].received_at if box else 0.0)
            mail = StoredMail(str(uuid.uuid4()), to, sender, tuple((str(k), str(v)) for k, v in headers), body, now)
            box.append(mail)
        return mail.id

    def fetch_inbox(self, address: str, since: float | None = None) -> list[StoredMail]:
        with self._lock:
            box = list(self._boxes.get(address, ()))
        if since is not None:
            box = [m for m in box if m.received_at >= since]
        return box

    def all_mail(self) -> list[StoredMail]:
        with self._lock:
            return [m for box in self._boxes.values() for m in box]

    def send(self, to: str, sender: str, subject: str, body: str) -> str:
        """Adapter matching the broker's mailer signature."""
        return self.deliver(to, sender, body, [("Subject", subject)])


def build_app(store: MailStore) -> JsonApp:
    app = JsonApp("meg-mail")

    @app.route("POST", "/v1/mail")
    def post_mail(req: Request) -> dict[str, Any]:
        headers = req.body.get("headers", []) if isinstance(req.body, dict) else []
        if isinstance(headers, dict):
            headers = list(headers.items())
        mail_id = store.deliver(req.field("to"), req.field("from"), req.field("body"), headers)
        return {"id": mail_id}

    @app.route("GET", "/v1/mail")
    def get_mail(req: Request) -> dict[str, Any]:
        since = req.query.get("since")
        try:
            since_f = float(since) if since not in (None, "") else None
        except ValueError:
            raise InvalidArgument("since must be a timestamp") from None
        return {"messages": [m.to_dict() for m in store.fetch_inbox(req.arg("to"), since_f)]}

    return app


def mail_addr_from_env() -> str:
    return os.environ.get("MEG_MAIL_ADDR", DEFAULT_MAIL_ADDR)
