"""The gateway agent: a stand-in for the phone app.

It owns the only copy of the user's private key, answers encrypt/decrypt
tasks routed through the broker, and keeps the unlocked key in memory only
while the "app" is open.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .api import ServerAPI
from .broker import BrokerTask
from .crypto import (
    KeyPair,
    MegEnvelope,
    PublicKey,
    TransportFrame,
    TransportKey,
    UnlockedKey,
    UserIdentity,
    b64d,
    b64e,
    fingerprint,
    generate_keypair,
    sign_and_encrypt,
    transport_decrypt,
    transport_encrypt,
    unlock_private_key,
    verify_and_decrypt,
)
from .errors import (
    AuthFailure,
    Conflict,
    DeviceLocked,
    MegError,
    NotFound,
    ParseError,
    ServerUnreachable,
    SignatureInvalid,
    TamperDetected,
)
from .protocol import RELOGIN_MESSAGE, ActionRequest, ActionResult, QrPayload
from .timing import NULL, Recorder

log = logging.getLogger(__name__)

DEFAULT_HOME = ".meg-agent"
BACKOFF_START_S = 0.5
BACKOFF_CAP_S = 8.0

KEY_FILE = "key.json"
DEVICE_FILE = "device.json"
PAIRINGS_FILE = "pairings.json"


class EnrollmentFailed(MegError):
    code = "enrollment-failed"
    http_status = 400


@dataclass
class AgentState:
    device_id: str
    keypair: KeyPair
    server_url: str
    session: UnlockedKey | None = None
    pairings: dict[str, TransportKey] = field(default_factory=dict)

    @property
    def email(self) -> str:
        return self.keypair.public_key.email


def _transient(exc: MegError) -> bool:
    return isinstance(exc, ServerUnreachable) or exc.code == "internal-error"


class Agent:
    def __init__(
        self,
        server: ServerAPI | str,
        home: str | Path | None = None,
        *,
        recorder: Recorder = NULL,
    ):
        self.server = server if isinstance(server, ServerAPI) else ServerAPI(server)
        self.home = Path(home) if home is not None else None
        self.recorder = recorder
        self.state: AgentState | None = None
        self._lock = threading.RLock()
        self._stop = threading.Event()
        if self.home is not None and (self.home / KEY_FILE).exists():
            self._load()

    # -- persistence ------------------------------------------------------------

    def _load(self) -> None:
        kp = KeyPair.from_json((self.home / KEY_FILE).read_text(encoding="utf-8"))
        device = json.loads((self.home / DEVICE_FILE).read_text(encoding="utf-8"))
        self.state = AgentState(device["device_id"], kp, device.get("server_url", self.server.base_url))

    def _write(self, name: str, text: str) -> None:
        self.home.mkdir(parents=True, exist_ok=True)
        tmp = self.home / (name + ".tmp")
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, self.home / name)

    def _save_pairings(self) -> None:
        if self.home is None:
            return
        st = self._require_session()
        plain = json.dumps({cid: b64e(k.key) for cid, k in st.pairings.items()}).encode("utf-8")
        nonce = os.urandom(12)
        sealed = AESGCM(st.session.storage_key).encrypt(nonce, plain, b"MEG pairings " + st.device_id.encode())
        self._write(PAIRINGS_FILE, json.dumps({"version": 1, "nonce": b64e(nonce), "ciphertext": b64e(sealed)}))

    def _load_pairings(self) -> None:
        st = self.state
        path = self.home / PAIRINGS_FILE if self.home is not None else None
        if path is None or not path.exists():
            return
        blob = json.loads(path.read_text(encoding="utf-8"))
        try:
            plain = AESGCM(st.session.storage_key).decrypt(
                b64d(blob["nonce"]), b64d(blob["ciphertext"]), b"MEG pairings " + st.device_id.encode()
            )
        except InvalidTag:
            raise TamperDetected("pairings file failed authentication") from None
        for cid, key in json.loads(plain).items():
            st.pairings.setdefault(cid, TransportKey(b64d(key), cid))

    # -- control operations -------------------------------------------------------

    @property
    def enrolled(self) -> bool:
        return self.state is not None

    @property
    def unlocked(self) -> bool:
        return self.state is not None and self.state.session is not None

    def _require_enrolled(self) -> AgentState:
        if self.state is None:
            raise MegError("agent is not enrolled", code="not-enrolled")
        return self.state

    def _require_session(self) -> AgentState:
        st = self._require_enrolled()
        if st.session is None:
            raise DeviceLocked(RELOGIN_MESSAGE)
        return st

    def enroll(self, identity: UserIdentity, password: str) -> AgentState:
        """Generate keys, publish the public key, register this device.

        Nothing is written locally unless the server accepted the key.
        """
        with self._lock:
            if self.state is not None:
                raise Conflict("agent is already enrolled", code="already-enrolled")
            kp, cert = generate_keypair(identity, password)
            device_id = str(uuid.uuid4())
            try:
                self.server.register_device(device_id)
                self.server.upload_public_key(identity.email, kp.public_key.to_bytes(), cert.to_bytes())
            except MegError as exc:
                raise EnrollmentFailed(f"enrollment failed: {exc.message}", cause=exc.code) from exc
            state = AgentState(device_id, kp, self.server.base_url)
            state.session = unlock_private_key(kp, password)
            if self.home is not None:
                self._write(KEY_FILE, kp.to_json())
                self._write(DEVICE_FILE, json.dumps({"device_id": device_id, "server_url": self.server.base_url}))
            self.state = state
            log.info("enrolled %s as device %s", identity.email, device_id)
            return state

    def pair(self, qr: QrPayload | str) -> dict[str, Any]:
        if isinstance(qr, str):
            qr = QrPayload.read(qr)
        with self._lock:
            st = self._require_session()
            if qr.client_id in st.pairings:
                raise Conflict("this client is already paired", code="already-paired")
            self.server.record_pairing(st.device_id, qr.client_id)
            st.pairings[qr.client_id] = qr.key
            self._save_pairings()
            log.info("paired client %s", qr.client_id)
            return {"client_id": qr.client_id, "paired": True}

    def open_app(self, password: str) -> None:
        with self._lock:
            st = self._require_enrolled()
            if st.session is not None:
                return
            st.session = unlock_private_key(st.keypair, password)
            try:
                self._load_pairings()
            except MegError:
                st.session.close()
                st.session = None
                raise

    def close_app(self) -> None:
        with self._lock:
            if self.state is not None and self.state.session is not None:
                self.state.session.close()
                self.state.session = None

    def shutdown(self) -> None:
        self._stop.set()

    def reset_shutdown(self) -> None:
        self._stop.clear()

    # -- task processing ----------------------------------------------------------

    def _lookup(self, email: str | None = None, fpr: str | None = None):
        return self.server.lookup_public_key(email=email, fingerprint=fpr)

    def process_task(self, task: BrokerTask) -> TransportFrame:
        """Run one task; raises :class:`MegError` carrying the task-error code."""
        with self._lock:
            st = self._require_session()
            key = st.pairings.get(task.client_id)
            if key is None and self.home is not None:
                # another process (``meg-agent pair``) may have added it
                self._load_pairings()
                key = st.pairings.get(task.client_id)
            if key is None:
                raise NotFound("no pairing for this client", code="unknown-client")
            request = ActionRequest.from_bytes(transport_decrypt(task.request_frame, key, task.action))
            if request.action != task.action:
                raise TamperDetected("request action does not match the task")
            if request.action == "encrypt":
                result = self._encrypt(st, request)
            else:
                result = self._decrypt(st, request)
            return transport_encrypt(result.to_bytes(), key, "result")

    def _encrypt(self, st: AgentState, request: ActionRequest) -> ActionResult:
        keys: list[PublicKey] = []
        missing: list[str] = []
        revoked: list[str] = []
        for email in request.recipient_emails:
            try:
                rec = self._lookup(email=email)
            except NotFound:
                missing.append(email)
                continue
            if rec.revoked:
                revoked.append(email)
            else:
                keys.append(rec.key())
        if missing:
            raise NotFound(f"no MEG key for {', '.join(missing)}", code="recipient-not-found", emails=missing)
        if revoked:
            raise MegError(f"key revoked for {', '.join(revoked)}", code="recipient-revoked", emails=revoked)
        env = sign_and_encrypt(request.body.encode("utf-8"), st.session, keys)
        return ActionResult("encrypt", env.armor(), st.email)

    def _decrypt(self, st: AgentState, request: ActionRequest) -> ActionResult:
        try:
            env = MegEnvelope.dearmor(request.body)
        except ParseError as exc:
            raise TamperDetected(f"armored message is damaged: {exc.message}") from None
        try:
            rec = self._lookup(fpr=env.sender_fpr.hex)
        except NotFound:
            raise SignatureInvalid("sender key is unknown; the message cannot be verified") from None
        if rec.revoked:
            raise SignatureInvalid("sender key has been revoked")
        sender = rec.key()
        if fingerprint(sender) != env.sender_fpr:
            raise SignatureInvalid("keystore returned a key with the wrong fingerprint")
        plaintext = verify_and_decrypt(env, st.session, sender)
        try:
            body = plaintext.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("decrypted body is not UTF-8 text") from None
        return ActionResult("decrypt", body, rec.email)

    def handle(self, task: BrokerTask) -> str:
        """Process and report one fetched task. Returns the terminal status."""
        start = self.recorder.mark(task.task_id, "mobile_start")
        try:
            frame = self.process_task(task)
            outcome: dict[str, Any] = {"frame": frame}
        except MegError as exc:
            log.info("task %s failed: %s", task.task_id, exc.code)
            outcome = {"error": {"code": exc.code, "message": exc.message, **exc.detail}}
        except Exception:
            log.exception("task %s crashed", task.task_id)
            outcome = {"error": {"code": "internal-error", "message": "device failed to process the task"}}
        status = "completed" if "frame" in outcome else "failed"
        # closed before the hand-back so the span is on record once the server has the result
        end = self.recorder.mark(task.task_id, "mobile_end")
        self.recorder.add(task.task_id, "mobile", end - start)
        try:
            self._with_retry(lambda: self.server.complete_task(task.task_id, **outcome))
        except Conflict as exc:
            # re-delivered or timed-out task: the server already has a final state
            log.warning("task %s not completed: %s", task.task_id, exc.code)
            status = exc.code
        return status

    def _with_retry(self, fn):
        delay = BACKOFF_START_S
        while True:
            try:
                return fn()
            except MegError as exc:
                if not _transient(exc) or self._stop.is_set():
                    raise
                log.warning("server error (%s); retrying in %.1fs", exc.code, delay)
                if self._stop.wait(delay):
                    raise
                delay = min(delay * 2, BACKOFF_CAP_S)

    def run_loop(
        self,
        max_tasks: int | None = None,
        *,
        wait_s: float = 5.0,
        idle_timeout: float | None = None,
    ) -> int:
        """Await notifications, fetch, process and complete tasks.

        Stops after ``max_tasks`` tasks, after ``idle_timeout`` seconds
        without work, or when :meth:`shutdown` is called. A fetched batch is
        always finished, so the count can exceed ``max_tasks``.
        """
        st = self._require_enrolled()
        processed = 0
        idle_since = time.monotonic()
        delay = BACKOFF_START_S
        while not self._stop.is_set():
            if max_tasks is not None and processed >= max_tasks:
                break
            wait = wait_s
            if idle_timeout is not None:
                left = idle_timeout - (time.monotonic() - idle_since)
                if left <= 0:
                    break
                wait = min(wait, left)
            try:
                event = self.server.await_notification(st.device_id, wait)
                tasks = self.server.fetch_pending(st.device_id) if event else []
            except MegError as exc:
                if not _transient(exc):
                    raise
                log.warning("server error (%s); retrying in %.1fs", exc.code, delay)
                self._stop.wait(delay)
                delay = min(delay * 2, BACKOFF_CAP_S)
                continue
            delay = BACKOFF_START_S
            for task in tasks:
                try:
                    self.handle(task)
                except MegError as exc:
                    log.error("task %s could not be reported: %s", task.task_id, exc.code)
                processed += 1
            if tasks:
                idle_since = time.monotonic()
        return processed


def agent_home_from_env() -> Path:
    return Path(os.environ.get("MEG_AGENT_HOME", DEFAULT_HOME))
