"""HTTP front end for :class:`meg.broker.Broker`.

Paths::

    POST /v1/devices                    {device_id}
    POST /v1/pairings                   {device_id, client_id}
    GET  /v1/pairings?client_id=...
    POST /v1/keys                       {email, public_key, revocation_cert}
    GET  /v1/keys?email=... | ?fingerprint=...
    POST /v1/revocations/request        {email}
    POST /v1/revocations/confirm        {token}
    POST /v1/tasks                      {client_id, action, frame} -> {task_id}
    GET  /v1/notifications?device_id=...&timeout_ms=...
    GET  /v1/tasks/pending?device_id=...
    POST /v1/tasks/{task_id}/complete   {frame} | {error}
    GET  /v1/tasks/{task_id}
"""

from __future__ import annotations

from typing import Any

from .broker import Broker
from .crypto import TransportFrame, b64d
from .errors import InvalidArgument
from .httpkit import JsonApp, Request
from .timing import NULL, Recorder

MAX_NOTIFY_TIMEOUT_MS = 60_000


def build_app(broker: Broker, recorder: Recorder = NULL) -> JsonApp:
    app = JsonApp("meg-server")

    @app.route("POST", "/v1/devices")
    def register_device(req: Request) -> Any:
        return broker.register_device(req.field("device_id"))

    @app.route("POST", "/v1/pairings")
    def record_pairing(req: Request) -> Any:
        return broker.record_pairing(req.field("device_id"), req.field("client_id"))

    @app.route("GET", "/v1/pairings")
    def pairing_status(req: Request) -> Any:
        return broker.pairing_status(req.arg("client_id"))

    @app.route("POST", "/v1/keys")
    def upload_key(req: Request) -> Any:
        return broker.upload_public_key(
            req.field("email"), b64d(req.field("public_key")), b64d(req.field("revocation_cert"))
        )

    @app.route("GET", "/v1/keys")
    def lookup_key(req: Request) -> Any:
        if "email" in req.query:
            return broker.lookup_public_key(email=req.query["email"]).to_dict()
        return broker.lookup_public_key(fpr=req.arg("fingerprint")).to_dict()

    @app.route("POST", "/v1/revocations/request")
    def request_revocation(req: Request) -> Any:
        return broker.request_revocation(req.field("email"))

    @app.route("POST", "/v1/revocations/confirm")
    def confirm_revocation(req: Request) -> Any:
        return broker.confirm_revocation(req.field("token"))

    @app.route("POST", "/v1/tasks")
    def submit_task(req: Request) -> Any:
        frame = TransportFrame.from_dict(req.field("frame"))
        task_id = broker.submit_task(req.field("client_id"), req.field("action"), frame)
        recorder.mark(task_id, "server_submit_in", req.received_at)
        return {"task_id": task_id}

    @app.route("GET", "/v1/notifications")
    def notifications(req: Request) -> Any:
        try:
            timeout_ms = int(req.query.get("timeout_ms", "0"))
        except ValueError:
            raise InvalidArgument("timeout_ms must be an integer") from None
        timeout_ms = max(0, min(timeout_ms, MAX_NOTIFY_TIMEOUT_MS))
        event = broker.await_notification(req.arg("device_id"), timeout_ms / 1000.0)
        if event is None:
            return {"event": None, "timeout": True}
        return {"event": event, "timeout": False}

    @app.route("GET", "/v1/tasks/pending")
    def fetch_pending(req: Request) -> Any:
        return {"tasks": [t.to_dict() for t in broker.fetch_pending(req.arg("device_id"))]}

    @app.route("POST", "/v1/tasks/{task_id}/complete")
    def complete_task(req: Request) -> Any:
        body = req.body if isinstance(req.body, dict) else {}
        frame = TransportFrame.from_dict(body["frame"]) if body.get("frame") is not None else None
        return broker.complete_task(req.params["task_id"], frame=frame, error=body.get("error"))

    @app.route("GET", "/v1/tasks/{task_id}")
    def poll_result(req: Request) -> Any:
        out = broker.poll_result(req.params["task_id"])
        if out["status"] in ("completed", "failed"):
            req.after_send.append(lambda t: recorder.mark(out["task_id"], "server_result_out", t))
        return out

    return app
