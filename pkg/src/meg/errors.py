"""Error types shared by every MEG component.

Each error carries a stable ``code`` string. The code is what crosses the
wire (HTTP error bodies, failed broker tasks) and what callers match on.
"""

from __future__ import annotations

from typing import Any


class MegError(Exception):
    code = "internal-error"
    http_status = 500

    def __init__(self, message: str = "", *, code: str | None = None, **detail: Any):
        if code is not None:
            self.code = code
        super().__init__(message or self.code)
        self.message = message or self.code
        self.detail = detail

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"code": self.code, "message": self.message}
        out.update(self.detail)
        return out


class InvalidArgument(MegError):
    code = "invalid-argument"
    http_status = 400


class ParseError(MegError):
    code = "parse-error"
    http_status = 400


class AuthFailure(MegError):
    code = "auth-failure"
    http_status = 401


class TamperDetected(MegError):
    code = "tamper-detected"
    http_status = 400


class SignatureInvalid(MegError):
    code = "signature-invalid"
    http_status = 400


class NotARecipient(MegError):
    code = "not-a-recipient"
    http_status = 400


class NotFound(MegError):
    code = "not-found"
    http_status = 404


class Conflict(MegError):
    """wrong-state, revoked-conflict, already-paired."""

    code = "conflict"
    http_status = 409


class DeviceLocked(MegError):
    code = "device-locked"
    http_status = 423


class ServerUnreachable(MegError):
    code = "server-unreachable"
    http_status = 503


class PollTimeout(MegError):
    code = "timeout"
    http_status = 504


# code -> class, used to rebuild typed errors from wire payloads
_BY_CODE: dict[str, type[MegError]] = {
    "invalid-argument": InvalidArgument,
    "parse-error": ParseError,
    "auth-failure": AuthFailure,
    "tamper-detected": TamperDetected,
    "signature-invalid": SignatureInvalid,
    "not-a-recipient": NotARecipient,
    "not-found": NotFound,
    "unknown-device": NotFound,
    "unknown-task": NotFound,
    "unknown-client": NotFound,
    "recipient-not-found": NotFound,
    "wrong-state": Conflict,
    "revoked-conflict": Conflict,
    "already-paired": Conflict,
    "unpaired-client": Conflict,
    "cert-mismatch": InvalidArgument,
    "token-invalid": InvalidArgument,
    "not-paired": Conflict,
    "device-locked": DeviceLocked,
    "server-unreachable": ServerUnreachable,
    "timeout": PollTimeout,
}


def error_from_dict(data: dict[str, Any]) -> MegError:
    code = str(data.get("code", "internal-error"))
    message = str(data.get("message", code))
    detail = {k: v for k, v in data.items() if k not in ("code", "message")}
    cls = _BY_CODE.get(code, MegError)
    return cls(message, code=code, **detail)


def http_status_for(code: str) -> int:
    return _BY_CODE.get(code, MegError).http_status
