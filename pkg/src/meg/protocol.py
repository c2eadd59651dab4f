"""Payloads exchanged between the client plugin and the gateway agent.

These are the plaintexts that travel inside transport frames, plus the QR
pairing payload that is shown on screen and never sent over the network.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .crypto import TransportKey, b64d, b64e
from .errors import InvalidArgument, ParseError

QR_VERSION = 1

RELOGIN_MESSAGE = "Please log back into the MEG mobile app to complete this action."


@dataclass(frozen=True)
class QrPayload:
    version: int
    client_id: str
    transport_key: bytes
    server_url: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "client_id": self.client_id,
            "transport_key": b64e(self.transport_key),
            "server_url": self.server_url,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "QrPayload":
        try:
            data = json.loads(text)
            if not isinstance(data, dict):
                raise ParseError("QR payload must be a JSON object")
            payload = cls(
                int(data["version"]),
                str(uuid.UUID(data["client_id"])),
                b64d(data["transport_key"]),
                str(data["server_url"]),
            )
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise ParseError(f"malformed QR payload: {exc}") from None
        if payload.version != QR_VERSION or len(payload.transport_key) != 32:
            raise ParseError("unsupported QR payload")
        return payload

    @property
    def key(self) -> TransportKey:
        return TransportKey(self.transport_key, self.client_id)

    @classmethod
    def for_key(cls, key: TransportKey, server_url: str) -> "QrPayload":
        return cls(QR_VERSION, key.client_id, key.key, server_url)

    def render_png(self, path: str | Path, scale: int = 8) -> Path:
        import segno

        path = Path(path)
        segno.make(self.to_json(), error="m", micro=False).save(str(path), scale=scale)
        return path

    @classmethod
    def read(cls, source: str) -> "QrPayload":
        """Accept a literal JSON payload, a JSON file, or a QR PNG image."""
        text = source.strip()
        if text.startswith("{"):
            return cls.from_json(text)
        path = Path(source)
        if not path.is_file():
            raise ParseError("QR source is neither a JSON payload nor a readable file")
        if path.suffix.lower() == ".png":
            return cls.from_json(_decode_qr_image(path))
        return cls.from_json(path.read_text(encoding="utf-8"))


def _decode_qr_image(path: Path) -> str:
    try:
        import cv2
    except ImportError:  # pragma: no cover - optional dependency
        raise ParseError("reading QR images needs opencv-python-headless") from None
    img = cv2.imread(str(path))
    if img is None:
        raise ParseError(f"cannot read image {path}")
    text = ""
    # the classic detector misses the odd code that the Aruco one reads
    for detector in (cv2.QRCodeDetector(), cv2.QRCodeDetectorAruco()):
        text, _, _ = detector.detectAndDecode(img)
        if text:
            break
    if not text:
        raise ParseError(f"no QR code found in {path}")
    return text


@dataclass(frozen=True)
class ActionRequest:
    action: str
    body: str
    sender_email: str
    recipient_emails: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.action not in ("encrypt", "decrypt"):
            raise InvalidArgument(f"unknown action {self.action!r}")
        if not self.body:
            raise InvalidArgument("body must not be empty")
        if self.action == "encrypt" and not self.recipient_emails:
            raise InvalidArgument("encrypt needs at least one recipient")

    def to_bytes(self) -> bytes:
        return json.dumps(
            {
                "action": self.action,
                "body": self.body,
                "sender_email": self.sender_email,
                "recipient_emails": list(self.recipient_emails),
            },
            separators=(",", ":"),
        ).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "ActionRequest":
        try:
            obj = json.loads(data)
            return cls(
                str(obj["action"]),
                str(obj["body"]),
                str(obj.get("sender_email", "")),
                tuple(str(e) for e in obj.get("recipient_emails", ())),
            )
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise ParseError(f"malformed action request: {exc}") from None


@dataclass(frozen=True)
class ActionResult:
    """Plaintext of a ``result`` frame: armored envelope or decrypted body."""

    action: str
    body: str
    sender_email: str = ""

    def to_bytes(self) -> bytes:
        return json.dumps(
            {"action": self.action, "body": self.body, "sender_email": self.sender_email}, separators=(",", ":")
        ).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "ActionResult":
        try:
            obj = json.loads(data)
            return cls(str(obj["action"]), str(obj["body"]), str(obj.get("sender_email", "")))
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise ParseError(f"malformed action result: {exc}") from None
