"""Keystore, revocation database, device directory and task broker.

All state changes go through :meth:`Broker._commit`, which applies an event
to memory and, when a journal path is configured, appends the same event as
one JSON line. Replaying the journal on start-up rebuilds the store.

The broker only ever holds public keys, revocation certificates, hashed
revocation tokens, routing metadata and opaque :class:`TransportFrame`
ciphertext.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .crypto import (
    Fingerprint,
    PublicKey,
    RevocationCertificate,
    TransportFrame,
    b64d,
    b64e,
    fingerprint,
    verify_revocation,
)
from .errors import Conflict, InvalidArgument, MegError, NotFound, ParseError

log = logging.getLogger(__name__)

TASK_ACTIONS = ("encrypt", "decrypt")
SERVER_MAIL_FROM = "no-reply@meg.invalid"


class TaskStatus(str, enum.Enum):
    PENDING = "pending"
    DELIVERED = "delivered"
    COMPLETED = "completed"
    FAILED = "failed"

    @property
    def terminal(self) -> bool:
        return self in (TaskStatus.COMPLETED, TaskStatus.FAILED)


@dataclass
class ServerConfig:
    addr: str = "127.0.0.1:8780"
    task_ttl_s: float = 3600.0
    delivery_timeout_s: float = 60.0
    token_ttl_s: float = 3600.0
    journal_path: str | None = None

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> "ServerConfig":
        env = os.environ if env is None else env
        cfg = cls()
        cfg.addr = env.get("MEG_SERVER_ADDR", cfg.addr)
        cfg.task_ttl_s = float(env.get("MEG_TASK_TTL_S", cfg.task_ttl_s))
        cfg.delivery_timeout_s = float(env.get("MEG_DELIVERY_TIMEOUT_S", cfg.delivery_timeout_s))
        cfg.token_ttl_s = float(env.get("MEG_TOKEN_TTL_S", cfg.token_ttl_s))
        cfg.journal_path = env.get("MEG_JOURNAL_PATH") or None
        return cfg


@dataclass
class PublicKeyRecord:
    email: str
    public_key: bytes
    fingerprint: Fingerprint
    revoked: bool
    uploaded_at: float
    revocation_cert: bytes | None = None  # published only once revoked

    def to_dict(self) -> dict[str, Any]:
        out = {
            "email": self.email,
            "public_key": b64e(self.public_key),
            "fingerprint": self.fingerprint.hex,
            "revoked": self.revoked,
            "uploaded_at": self.uploaded_at,
        }
        if self.revoked and self.revocation_cert is not None:
            out["revocation_cert"] = b64e(self.revocation_cert)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PublicKeyRecord":
        cert = data.get("revocation_cert")
        return cls(
            email=data["email"],
            public_key=b64d(data["public_key"]),
            fingerprint=Fingerprint.from_hex(data["fingerprint"]),
            revoked=bool(data["revoked"]),
            uploaded_at=float(data["uploaded_at"]),
            revocation_cert=b64d(cert) if cert else None,
        )

    def key(self) -> PublicKey:
        return PublicKey.from_bytes(self.public_key)


@dataclass
class BrokerTask:
    task_id: str
    client_id: str
    device_id: str
    action: str
    request_frame: TransportFrame
    status: TaskStatus = TaskStatus.PENDING
    result_frame: TransportFrame | None = None
    error: dict[str, Any] | None = None
    created_at: float = 0.0
    updated_at: float = 0.0
    seq: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "client_id": self.client_id,
            "device_id": self.device_id,
            "action": self.action,
            "request_frame": self.request_frame.to_dict(),
            "result_frame": self.result_frame.to_dict() if self.result_frame else None,
            "error": self.error,
            "status": self.status.value,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BrokerTask":
        result = data.get("result_frame")
        return cls(
            task_id=data["task_id"],
            client_id=data["client_id"],
            device_id=data["device_id"],
            action=data["action"],
            request_frame=TransportFrame.from_dict(data["request_frame"]),
            status=TaskStatus(data["status"]),
            result_frame=TransportFrame.from_dict(result) if result else None,
            error=data.get("error"),
            created_at=float(data["created_at"]),
            updated_at=float(data["updated_at"]),
            seq=int(data.get("seq", 0)),
        )


@dataclass
class _Token:
    email: str
    expires_at: float
    used: bool = False


@dataclass
class _Device:
    device_id: str
    paired_clients: set[str] = field(default_factory=set)


Mailer = Callable[[str, str, str, str], Any]  # (to, from, subject, body)


def _hash_token(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


def _check_uuid(value: Any, what: str) -> str:
    try:
        return str(uuid.UUID(str(value)))
    except ValueError:
        raise InvalidArgument(f"{what} must be a UUID") from None


class Broker:
    """Thread-safe in-memory server state.

    ``clock`` returns wall-clock seconds and is injectable for TTL tests.
    ``mailer`` delivers revocation mails; without one they are dropped.
    """

    def __init__(
        self,
        config: ServerConfig | None = None,
        *,
        mailer: Mailer | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.config = config or ServerConfig()
        self.mailer = mailer
        self.clock = clock
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._devices: dict[str, _Device] = {}
        self._client_device: dict[str, str] = {}
        self._keys: dict[str, PublicKeyRecord] = {}
        self._by_fpr: dict[Fingerprint, PublicKeyRecord] = {}
        self._certs: dict[Fingerprint, bytes] = {}
        self._revoked: set[Fingerprint] = set()
        self._tokens: dict[str, _Token] = {}
        self._tasks: dict[str, BrokerTask] = {}
        self._seq = 0
        self._journal = None
        if self.config.journal_path:
            path = Path(self.config.journal_path)
            if path.exists():
                self._replay(path)
            self._journal = open(path, "a", encoding="utf-8")

    def close(self) -> None:
        with self._lock:
            if self._journal is not None:
                self._journal.close()
                self._journal = None

    # -- event plumbing -----------------------------------------------------

    def _commit(self, event: dict[str, Any]) -> None:
        self._apply(event)
        if self._journal is not None:
            self._journal.write(json.dumps(event, sort_keys=True) + "\n")
            self._journal.flush()

    def _replay(self, path: Path) -> None:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    self._apply(json.loads(line))
                except (ValueError, KeyError, MegError) as exc:
                    # a torn final line is expected after a crash
                    log.warning("journal line %d skipped: %s", n, exc)

    def _apply(self, ev: dict[str, Any]) -> None:
        kind = ev["type"]
        if kind == "device":
            self._devices.setdefault(ev["device_id"], _Device(ev["device_id"]))
        elif kind == "pairing":
            self._devices[ev["device_id"]].paired_clients.add(ev["client_id"])
            self._client_device[ev["client_id"]] = ev["device_id"]
        elif kind == "key":
            fpr = Fingerprint.from_hex(ev["fingerprint"])
            rec = PublicKeyRecord(ev["email"], b64d(ev["public_key"]), fpr, fpr in self._revoked, ev["at"])
            self._keys[ev["email"]] = rec
            self._by_fpr[fpr] = rec
            self._certs[fpr] = b64d(ev["revocation_cert"])
        elif kind == "revoke_request":
            self._tokens[ev["token_hash"]] = _Token(ev["email"], ev["expires_at"])
        elif kind == "revoke_confirm":
            tok = self._tokens[ev["token_hash"]]
            tok.used = True
            rec = self._keys[tok.email]
            self._revoked.add(rec.fingerprint)
            rec.revoked = True
            rec.revocation_cert = self._certs.get(rec.fingerprint)
        elif kind == "task_submit":
            task = BrokerTask.from_dict(ev["task"])
            self._tasks[task.task_id] = task
            self._seq = max(self._seq, task.seq)
        elif kind == "task_deliver":
            task = self._tasks[ev["task_id"]]
            task.status = TaskStatus.DELIVERED
            task.updated_at = ev["at"]
        elif kind == "task_complete":
            task = self._tasks[ev["task_id"]]
            if ev.get("frame") is not None:
                task.result_frame = TransportFrame.from_dict(ev["frame"])
                task.status = TaskStatus.COMPLETED
            else:
                task.error = ev["error"]
                task.status = TaskStatus.FAILED
            task.updated_at = ev["at"]
        elif kind == "task_gc":
            self._tasks.pop(ev["task_id"], None)
        else:
            raise ParseError(f"unknown journal event {kind!r}")

    def _sweep(self) -> None:
        now = self.clock()
        for task in list(self._tasks.values()):
            if task.status is TaskStatus.DELIVERED and now - task.updated_at > self.config.delivery_timeout_s:
                log.info("task %s timed out after delivery", task.task_id)
                self._commit(
                    {
                        "type": "task_complete",
                        "task_id": task.task_id,
                        "frame": None,
                        "error": {
                            "code": "delivery-timeout",
                            "message": "the device did not finish the task in time; retry when it is online",
                        },
                        "at": now,
                    }
                )
            elif task.status.terminal and now - task.updated_at > self.config.task_ttl_s:
                self._commit({"type": "task_gc", "task_id": task.task_id})

    # -- devices and pairing --------------------------------------------------

    def register_device(self, device_id: str) -> dict[str, Any]:
        device_id = _check_uuid(device_id, "device_id")
        with self._lock:
            if device_id not in self._devices:
                self._commit({"type": "device", "device_id": device_id})
                log.info("device %s registered", device_id)
        return {"device_id": device_id, "registered": True}

    def _device(self, device_id: str) -> _Device:
        dev = self._devices.get(str(device_id))
        if dev is None:
            raise NotFound(f"unknown device {device_id}", code="unknown-device")
        return dev

    def record_pairing(self, device_id: str, client_id: str) -> dict[str, Any]:
        client_id = _check_uuid(client_id, "client_id")
        with self._lock:
            dev = self._device(device_id)
            current = self._client_device.get(client_id)
            if current is not None and current != dev.device_id:
                raise Conflict("client is already paired with another device", code="already-paired")
            if current is None:
                self._commit({"type": "pairing", "device_id": dev.device_id, "client_id": client_id})
                log.info("client %s paired with device %s", client_id, dev.device_id)
        return {"device_id": dev.device_id, "client_id": client_id, "paired": True}

    def pairing_status(self, client_id: str) -> dict[str, Any]:
        with self._lock:
            return {"client_id": client_id, "paired": client_id in self._client_device}

    # -- keystore -------------------------------------------------------------

    def upload_public_key(self, email: str, public_key: bytes, revocation_cert: bytes) -> dict[str, Any]:
        pk = PublicKey.from_bytes(public_key)
        if pk.email != email:
            raise InvalidArgument("key user id does not match the upload address")
        try:
            cert = RevocationCertificate.from_bytes(revocation_cert)
        except ParseError:
            raise InvalidArgument("revocation certificate is malformed", code="cert-mismatch") from None
        if not verify_revocation(cert, pk):
            raise InvalidArgument("revocation certificate does not match the key", code="cert-mismatch")
        fpr = fingerprint(pk)
        with self._lock:
            existing = self._keys.get(email)
            if (existing is not None and existing.revoked) or fpr in self._revoked:
                raise Conflict(f"the key for {email} has been revoked", code="revoked-conflict")
            self._commit(
                {
                    "type": "key",
                    "email": email,
                    "public_key": b64e(pk.to_bytes()),
                    "fingerprint": fpr.hex,
                    "revocation_cert": b64e(revocation_cert),
                    "at": self.clock(),
                }
            )
            log.info("key %s stored for %s", fpr.hex[:16], email)
        return {"email": email, "fingerprint": fpr.hex}

    def lookup_public_key(self, email: str | None = None, fpr: str | Fingerprint | None = None) -> PublicKeyRecord:
        with self._lock:
            if email is not None:
                rec = self._keys.get(email)
            elif fpr is not None:
                if not isinstance(fpr, Fingerprint):
                    fpr = Fingerprint.from_hex(fpr)
                rec = self._by_fpr.get(fpr)
            else:
                raise InvalidArgument("email or fingerprint is required")
            if rec is None:
                raise NotFound("no key on file")
            out = PublicKeyRecord(**rec.__dict__)
            if out.fingerprint in self._revoked:
                out.revoked = True
                out.revocation_cert = self._certs.get(out.fingerprint)
            return out

    # -- revocation -------------------------------------------------------------

    def request_revocation(self, email: str) -> dict[str, Any]:
        with self._lock:
            rec = self._keys.get(email)
            if rec is None or rec.revoked:
                raise NotFound(f"no active key for {email}")
            token = b64e(os.urandom(32))
            expires = self.clock() + self.config.token_ttl_s
            self._commit(
                {"type": "revoke_request", "token_hash": _hash_token(token), "email": email, "expires_at": expires}
            )
        log.info("revocation requested for key %s", rec.fingerprint.hex[:16])
        if self.mailer is not None:
            body = (
                "Someone asked to revoke the MEG key for this address.\n"
                f"Key fingerprint: {rec.fingerprint.hex}\n\n"
                "If this was you, confirm with this token:\n\n"
                f"    {token}\n\n"
                "If you did not ask for this, ignore this message.\n"
            )
            self.mailer(email, SERVER_MAIL_FROM, "Confirm MEG key revocation", body)
        return {"email": email, "requested": True, "expires_at": expires}

    def confirm_revocation(self, token: str) -> dict[str, Any]:
        h = _hash_token(str(token))
        with self._lock:
            tok = self._tokens.get(h)
            if tok is None or tok.used or self.clock() > tok.expires_at:
                raise InvalidArgument("revocation token is invalid, expired or already used", code="token-invalid")
            self._commit({"type": "revoke_confirm", "token_hash": h})
            rec = self._keys[tok.email]
        log.info("key %s revoked", rec.fingerprint.hex[:16])
        return {"email": tok.email, "fingerprint": rec.fingerprint.hex, "revoked": True}

    # -- tasks ------------------------------------------------------------------

    def submit_task(self, client_id: str, action: str, frame: TransportFrame) -> str:
        if action not in TASK_ACTIONS:
            raise InvalidArgument(f"unknown action {action!r}")
        if frame.aad_tag != action or frame.client_id != client_id:
            raise InvalidArgument("frame is not bound to this client and action")
        with self._cond:
            self._sweep()
            device_id = self._client_device.get(client_id)
            if device_id is None:
                raise Conflict("client is not paired with a device", code="unpaired-client")
            now = self.clock()
            self._seq += 1
            task = BrokerTask(
                task_id=str(uuid.uuid4()),
                client_id=client_id,
                device_id=device_id,
                action=action,
                request_frame=frame,
                created_at=now,
                updated_at=now,
                seq=self._seq,
            )
            self._commit({"type": "task_submit", "task": task.to_dict()})
            self._cond.notify_all()
        log.info("task %s queued for device %s", task.task_id, device_id)
        return task.task_id

    def _has_pending(self, device_id: str) -> int:
        return sum(1 for t in self._tasks.values() if t.device_id == device_id and t.status is TaskStatus.PENDING)

    def await_notification(self, device_id: str, timeout: float) -> dict[str, Any] | None:
        """Block until the device has pending work or ``timeout`` elapses.

        Level-triggered: the pending set is re-checked under the lock before
        every wait, so a submit racing with the call cannot be missed.
        """
        deadline = time.monotonic() + max(0.0, float(timeout))
        with self._cond:
            self._device(device_id)
            while True:
                pending = self._has_pending(str(device_id))
                if pending:
                    return {"device_id": str(device_id), "pending": pending}
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)

    def fetch_pending(self, device_id: str) -> list[BrokerTask]:
        with self._lock:
            self._sweep()
            self._device(device_id)
            ready = sorted(
                (t for t in self._tasks.values() if t.device_id == str(device_id) and t.status is TaskStatus.PENDING),
                key=lambda t: (t.seq, t.created_at),
            )
            now = self.clock()
            for t in ready:
                self._commit({"type": "task_deliver", "task_id": t.task_id, "at": now})
            return [BrokerTask.from_dict(t.to_dict()) for t in ready]

    def complete_task(
        self,
        task_id: str,
        frame: TransportFrame | None = None,
        error: dict[str, Any] | None = None,
    ) -> dict[str, Any]:
        if (frame is None) == (error is None):
            raise InvalidArgument("exactly one of frame or error is required")
        if error is not None:
            if not isinstance(error, dict) or not isinstance(error.get("code"), str):
                raise InvalidArgument("error must carry a string code")
            error = {k: v for k, v in error.items() if isinstance(v, (str, int, float, list))}
        with self._lock:
            self._sweep()
            task = self._tasks.get(str(task_id))
            if task is None:
                raise NotFound(f"unknown task {task_id}", code="unknown-task")
            if task.status is not TaskStatus.DELIVERED:
                raise Conflict(f"task is {task.status.value}", code="wrong-state")
            if frame is not None and (frame.aad_tag != "result" or frame.client_id != task.client_id):
                raise InvalidArgument("result frame is not bound to the task's client")
            self._commit(
                {
                    "type": "task_complete",
                    "task_id": task.task_id,
                    "frame": frame.to_dict() if frame is not None else None,
                    "error": error,
                    "at": self.clock(),
                }
            )
            status = task.status.value
        log.info("task %s %s", task_id, status)
        return {"task_id": str(task_id), "status": status}

    def poll_result(self, task_id: str) -> dict[str, Any]:
        with self._lock:
            self._sweep()
            task = self._tasks.get(str(task_id))
            if task is None:
                raise NotFound(f"unknown task {task_id}", code="unknown-task")
            out: dict[str, Any] = {"task_id": task.task_id, "status": task.status.value}
            if task.status is TaskStatus.COMPLETED:
                out["result_frame"] = task.result_frame.to_dict()
            elif task.status is TaskStatus.FAILED:
                out["error"] = dict(task.error or {})
            return out

    def get_task(self, task_id: str) -> BrokerTask:
        with self._lock:
            task = self._tasks.get(str(task_id))
            if task is None:
                raise NotFound(f"unknown task {task_id}", code="unknown-task")
            return BrokerTask.from_dict(task.to_dict())

    def tasks(self) -> list[BrokerTask]:
        with self._lock:
            return [BrokerTask.from_dict(t.to_dict()) for t in sorted(self._tasks.values(), key=lambda t: t.seq)]

    def snapshot(self) -> bytes:
        """Everything the server holds, as bytes, for at-rest audits."""
        with self._lock:
            state = {
                "devices": {d: sorted(v.paired_clients) for d, v in self._devices.items()},
                "keys": [r.to_dict() for r in self._by_fpr.values()],
                "certs": {f.hex: b64e(c) for f, c in self._certs.items()},
                "tokens": {h: t.__dict__ for h, t in self._tokens.items()},
                "tasks": [t.to_dict() for t in self._tasks.values()],
            }
        return json.dumps(state, sort_keys=True).encode("utf-8")
