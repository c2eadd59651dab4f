"""Email-client plugin, minus the mail client.

Sends and reads mail through the provider like any client would; when the
encrypt toggle is on, or a message carries the ``X-MEG: 1`` header, the body
takes a round trip to the paired phone through the broker first.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .api import MailAPI, ServerAPI
from .crypto import TransportKey, b64d, b64e, generate_transport_key, transport_decrypt, transport_encrypt
from .errors import (
    Conflict,
    DeviceLocked,
    InvalidArgument,
    MegError,
    PollTimeout,
    ServerUnreachable,
    SignatureInvalid,
    TamperDetected,
    error_from_dict,
)
from .mailsim import StoredMail
from .protocol import RELOGIN_MESSAGE, ActionRequest, ActionResult, QrPayload
from .timing import NULL, Recorder

log = logging.getLogger(__name__)

MEG_HEADER = "X-MEG"
MEG_HEADER_VALUE = "1"
DEFAULT_HOME = ".meg-client"
CONFIG_FILE = "client.json"

POLL_INTERVAL_S = 0.1
POLL_TIMEOUT_S = 30.0

INVITE_SUBJECT = "{sender} invited you to MEG encrypted email"
INVITE_BODY = """\
Hello,

{sender} tried to send you an encrypted email with MEG (Mobile Encryption
Gateway), but you do not have a MEG key yet, so the message was not sent.

MEG encrypts your mail on your own phone and works with the email account
you already have. Install the MEG app, enroll with this address ({recipient}),
and {sender} will be able to reach you privately.
"""


@dataclass
class ClientConfig:
    client_id: str
    transport_key: TransportKey
    account_email: str
    server_url: str
    mail_url: str
    paired: bool = False
    qr_path: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "client_id": self.client_id,
            "transport_key": b64e(self.transport_key.key),
            "account_email": self.account_email,
            "server_url": self.server_url,
            "mail_url": self.mail_url,
            "paired": self.paired,
            "qr_path": self.qr_path,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ClientConfig":
        cid = data["client_id"]
        return cls(
            client_id=cid,
            transport_key=TransportKey(b64d(data["transport_key"]), cid),
            account_email=data["account_email"],
            server_url=data["server_url"],
            mail_url=data["mail_url"],
            paired=bool(data.get("paired", False)),
            qr_path=data.get("qr_path"),
        )


@dataclass(frozen=True)
class OutgoingEmail:
    to: Sequence[str]
    subject: str
    body: str
    encrypt: bool = True

    def __post_init__(self) -> None:
        if not self.to:
            raise InvalidArgument("at least one recipient is required")


@dataclass
class DeliveryReport:
    status: str  # "sent-plain" | "sent-encrypted" | "invited"
    message_ids: list[str] = field(default_factory=list)
    invited: list[str] = field(default_factory=list)
    task_id: str | None = None


@dataclass
class ReceivedEmail:
    mail: StoredMail
    body: str
    encrypted: bool
    verified_sender: str | None = None


def is_meg_message(mail: StoredMail) -> bool:
    return (mail.header(MEG_HEADER) or "").strip() == MEG_HEADER_VALUE


class Client:
    def __init__(
        self,
        account_email: str,
        server: ServerAPI | str,
        mail: MailAPI | str,
        home: str | Path | None = None,
        *,
        recorder: Recorder = NULL,
        poll_interval: float = POLL_INTERVAL_S,
        poll_timeout: float = POLL_TIMEOUT_S,
    ):
        self.account_email = account_email
        self.server = server if isinstance(server, ServerAPI) else ServerAPI(server)
        self.mail = mail if isinstance(mail, MailAPI) else MailAPI(mail)
        self.home = Path(home) if home is not None else None
        self.recorder = recorder
        self.poll_interval = poll_interval
        self.poll_timeout = poll_timeout
        self.config: ClientConfig | None = None
        self.last_task_id: str | None = None
        self._cfg_lock = threading.Lock()
        if self.home is not None and (self.home / CONFIG_FILE).exists():
            data = json.loads((self.home / CONFIG_FILE).read_text(encoding="utf-8"))
            self.config = ClientConfig.from_dict(data)
            self.account_email = self.config.account_email

    def _save(self) -> None:
        if self.home is None or self.config is None:
            return
        self.home.mkdir(parents=True, exist_ok=True)
        path = self.home / CONFIG_FILE
        tmp = path.with_suffix(".tmp")
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(self.config.to_dict(), fh)
        os.replace(tmp, path)

    # -- pairing ----------------------------------------------------------------

    def init_pairing(self, png_path: str | Path | None = None) -> QrPayload:
        """Create (or re-show) the pairing payload for the phone to scan.

        The same payload is shown until the phone confirms; afterwards the
        key is never displayed again.
        """
        with self._cfg_lock:
            cfg = self.config
            if cfg is not None and not cfg.paired:
                try:
                    self._refresh_pairing(cfg)
                except ServerUnreachable:
                    pass
            if cfg is not None and cfg.paired:
                raise Conflict("this client is already paired", code="already-paired")
            if cfg is None:
                key = generate_transport_key()
                cfg = ClientConfig(key.client_id, key, self.account_email, self.server.base_url, self.mail.base_url)
                self.config = cfg
            payload = QrPayload.for_key(cfg.transport_key, cfg.server_url)
            if png_path is not None:
                payload.render_png(png_path)
                cfg.qr_path = str(png_path)
            self._save()
            return payload

    def _refresh_pairing(self, cfg: ClientConfig) -> bool:
        if not cfg.paired and self.server.pairing_status(cfg.client_id):
            cfg.paired = True
            if cfg.qr_path:
                # take the code off the "screen" once it has been used
                Path(cfg.qr_path).unlink(missing_ok=True)
                cfg.qr_path = None
            self._save()
        return cfg.paired

    def confirm_pairing(self) -> bool:
        with self._cfg_lock:
            if self.config is None:
                return False
            return self._refresh_pairing(self.config)

    def _require_paired(self) -> ClientConfig:
        cfg = self.config
        if cfg is None or not (cfg.paired or self.confirm_pairing()):
            raise Conflict("pair this client with the MEG app first", code="not-paired")
        return cfg

    # -- broker round trip ---------------------------------------------------------

    def run_task(self, request: ActionRequest) -> ActionResult:
        cfg = self._require_paired()
        started = time.perf_counter()
        aes = 0.0
        t = time.perf_counter()
        frame = transport_encrypt(request.to_bytes(), cfg.transport_key, request.action)
        aes += time.perf_counter() - t
        task_id = self.server.submit_task(cfg.client_id, request.action, frame)
        self.last_task_id = task_id
        self.recorder.mark(task_id, "client_start", started)
        self.recorder.mark(task_id, "client_submit_start", self.server.wire.sent)
        self.recorder.add(task_id, "client_aes", aes)
        return self._finish(task_id, request.action)

    def resume(self, task_id: str, action: str) -> ActionResult:
        """Pick up a task whose earlier poll timed out."""
        return self._finish(task_id, action)

    def _finish(self, task_id: str, action: str) -> ActionResult:
        cfg = self._require_paired()
        deadline = time.monotonic() + self.poll_timeout
        while True:
            out = self.server.poll_result(task_id)
            if out["status"] in ("completed", "failed"):
                break
            if time.monotonic() >= deadline:
                raise PollTimeout(
                    "the phone did not answer in time; resume with the task id", task_id=task_id, action=action
                )
            time.sleep(self.poll_interval)
        self.recorder.mark(task_id, "client_result_in", self.server.wire.received)
        if out["status"] == "failed":
            err = error_from_dict(out.get("error") or {})
            err.detail.setdefault("task_id", task_id)
            if err.code == "device-locked":
                raise DeviceLocked(RELOGIN_MESSAGE, task_id=task_id)
            raise err
        with self.recorder.span(task_id, "client_aes"):
            plain = transport_decrypt(out["result_frame"], cfg.transport_key, "result")
        result = ActionResult.from_bytes(plain)
        if result.action != action:
            raise TamperDetected("result does not answer the submitted action")
        self.recorder.mark(task_id, "client_end")
        return result

    # -- mail ----------------------------------------------------------------------

    def send_email(self, mail: OutgoingEmail) -> DeliveryReport:
        headers = [("Subject", mail.subject)]
        if not mail.encrypt:
            ids = [self.mail.deliver(to, self.account_email, mail.body, headers) for to in mail.to]
            return DeliveryReport("sent-plain", ids)

        request = ActionRequest("encrypt", mail.body, self.account_email, tuple(mail.to))
        try:
            result = self.run_task(request)
        except MegError as exc:
            if exc.code == "recipient-not-found":
                missing = list(exc.detail.get("emails") or mail.to)
                for addr in missing:
                    self.invite(addr)
                return DeliveryReport("invited", invited=missing, task_id=exc.detail.get("task_id"))
            raise
        ids = [
            self.mail.deliver(to, self.account_email, result.body, headers + [(MEG_HEADER, MEG_HEADER_VALUE)])
            for to in mail.to
        ]
        return DeliveryReport("sent-encrypted", ids)

    def receive_email(self, mail: StoredMail) -> ReceivedEmail:
        """Return displayable text; MEG mail is decrypted on the phone.

        The decrypted text only lives in the returned object. The copy in the
        mailbox is never touched.
        """
        if not is_meg_message(mail):
            return ReceivedEmail(mail, mail.body, encrypted=False)
        request = ActionRequest("decrypt", mail.body or " ", mail.sender, (self.account_email,))
        try:
            result = self.run_task(request)
        except SignatureInvalid as exc:
            raise SignatureInvalid(
                f"Warning: this message could not be authenticated and was not decrypted ({exc.message})",
                **exc.detail,
            ) from None
        return ReceivedEmail(mail, result.body, encrypted=True, verified_sender=result.sender_email)

    def inbox(self, since: float | None = None) -> list[StoredMail]:
        return self.mail.fetch_inbox(self.account_email, since)

    def invite(self, recipient: str) -> str:
        subject = INVITE_SUBJECT.format(sender=self.account_email)
        body = INVITE_BODY.format(sender=self.account_email, recipient=recipient)
        try:
            return self.mail.deliver(recipient, self.account_email, body, [("Subject", subject)])
        except ServerUnreachable as exc:
            raise MegError(f"invitation not delivered: {exc.message}", code="delivery-failed") from None

    # -- revocation ------------------------------------------------------------------

    def revoke_my_key(self) -> dict:
        return self.server.request_revocation(self.account_email)

    def complete_revocation(self, token: str) -> dict:
        return self.server.confirm_revocation(token.strip())


def client_home_from_env() -> Path:
    return Path(os.environ.get("MEG_CLIENT_HOME", DEFAULT_HOME))
