"""HTTP clients for the broker server and the mail provider."""

from __future__ import annotations

import threading
import time
from typing import Any

import httpx

from .broker import BrokerTask, PublicKeyRecord
from .crypto import TransportFrame, b64e
from .errors import MegError, ServerUnreachable, error_from_dict
from .httpkit import as_url
from .mailsim import StoredMail


class WireTimes(threading.local):
    """Per-thread time stamps of the last exchange, taken at the transport."""

    sent: float = 0.0
    received: float = 0.0


class _StampingTransport(httpx.BaseTransport):
    def __init__(self, inner: httpx.BaseTransport, times: WireTimes):
        self.inner = inner
        self.times = times

    def _trace(self, event: str, info: dict) -> None:
        if event == "http11.send_request_headers.started":
            self.times.sent = time.perf_counter()
        elif event == "http11.receive_response_headers.complete":
            self.times.received = time.perf_counter()

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        request.extensions = {**request.extensions, "trace": self._trace}
        self.times.sent = self.times.received = time.perf_counter()
        return self.inner.handle_request(request)

    def close(self) -> None:
        self.inner.close()


class _JsonClient:
    def __init__(self, base_url: str, *, transport: httpx.BaseTransport | None = None, timeout: float = 30.0):
        self.base_url = as_url(base_url)
        self.wire = WireTimes()
        inner = transport if transport is not None else httpx.HTTPTransport()
        self._http = httpx.Client(
            base_url=self.base_url, transport=_StampingTransport(inner, self.wire), timeout=timeout
        )

    def close(self) -> None:
        self._http.close()

    def _call(self, method: str, path: str, *, json: Any = None, params: dict | None = None,
              timeout: float | None = None) -> Any:
        kwargs: dict[str, Any] = {"json": json, "params": params}
        if timeout is not None:
            kwargs["timeout"] = timeout
        try:
            resp = self._http.request(method, path, **kwargs)
        except httpx.TransportError as exc:
            raise ServerUnreachable(f"{self.base_url} unreachable: {exc}") from None
        try:
            data = resp.json()
        except ValueError:
            raise MegError(f"non-JSON response ({resp.status_code}) from {self.base_url}{path}") from None
        if resp.status_code >= 400:
            err = data.get("error") if isinstance(data, dict) else None
            if isinstance(err, dict):
                raise error_from_dict(err)
            raise MegError(f"HTTP {resp.status_code} from {path}")
        return data


class ServerAPI(_JsonClient):
    def register_device(self, device_id: str) -> dict:
        return self._call("POST", "/v1/devices", json={"device_id": device_id})

    def record_pairing(self, device_id: str, client_id: str) -> dict:
        return self._call("POST", "/v1/pairings", json={"device_id": device_id, "client_id": client_id})

    def pairing_status(self, client_id: str) -> bool:
        return bool(self._call("GET", "/v1/pairings", params={"client_id": client_id})["paired"])

    def upload_public_key(self, email: str, public_key: bytes, revocation_cert: bytes) -> dict:
        body = {"email": email, "public_key": b64e(public_key), "revocation_cert": b64e(revocation_cert)}
        return self._call("POST", "/v1/keys", json=body)

    def lookup_public_key(self, email: str | None = None, fingerprint: str | None = None) -> PublicKeyRecord:
        params = {"email": email} if email is not None else {"fingerprint": fingerprint}
        return PublicKeyRecord.from_dict(self._call("GET", "/v1/keys", params=params))

    def request_revocation(self, email: str) -> dict:
        return self._call("POST", "/v1/revocations/request", json={"email": email})

    def confirm_revocation(self, token: str) -> dict:
        return self._call("POST", "/v1/revocations/confirm", json={"token": token})

    def submit_task(self, client_id: str, action: str, frame: TransportFrame) -> str:
        body = {"client_id": client_id, "action": action, "frame": frame.to_dict()}
        return self._call("POST", "/v1/tasks", json=body)["task_id"]

    def await_notification(self, device_id: str, timeout: float) -> dict | None:
        params = {"device_id": device_id, "timeout_ms": int(timeout * 1000)}
        data = self._call("GET", "/v1/notifications", params=params, timeout=timeout + 10.0)
        return data.get("event")

    def fetch_pending(self, device_id: str) -> list[BrokerTask]:
        data = self._call("GET", "/v1/tasks/pending", params={"device_id": device_id})
        return [BrokerTask.from_dict(t) for t in data["tasks"]]

    def complete_task(self, task_id: str, frame: TransportFrame | None = None, error: dict | None = None) -> dict:
        body = {"frame": frame.to_dict()} if frame is not None else {"error": error}
        return self._call("POST", f"/v1/tasks/{task_id}/complete", json=body)

    def poll_result(self, task_id: str) -> dict:
        out = self._call("GET", f"/v1/tasks/{task_id}")
        if out.get("result_frame"):
            out["result_frame"] = TransportFrame.from_dict(out["result_frame"])
        return out


class MailAPI(_JsonClient):
    def deliver(self, to: str, sender: str, body: str, headers: list[tuple[str, str]] = ()) -> str:
        payload = {"to": to, "from": sender, "body": body, "headers": [list(h) for h in headers]}
        return self._call("POST", "/v1/mail", json=payload)["id"]

    def send(self, to: str, sender: str, subject: str, body: str) -> str:
        return self.deliver(to, sender, body, [("Subject", subject)])

    def fetch_inbox(self, address: str, since: float | None = None) -> list[StoredMail]:
        params: dict[str, Any] = {"to": address}
        if since is not None:
            params["since"] = repr(since)
        return [StoredMail.from_dict(m) for m in self._call("GET", "/v1/mail", params=params)["messages"]]
