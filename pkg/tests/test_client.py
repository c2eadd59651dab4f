from __future__ import annotations

import threading
import time

import httpx
import pytest

from meg.api import ServerAPI
from meg.client import Client, OutgoingEmail, is_meg_message
from meg.errors import Conflict, DeviceLocked, InvalidArgument, MegError, PollTimeout, SignatureInvalid
from meg.mailsim import StoredMail
from meg.protocol import RELOGIN_MESSAGE, ActionRequest, QrPayload

BODY = "Meet me at the usual place at nine. Bring the blue folder and tell no one."


class Counting(httpx.BaseTransport):
    def __init__(self):
        self.inner = httpx.HTTPTransport()
        self.paths: list[str] = []

    def handle_request(self, request):
        self.paths.append(request.url.path)
        return self.inner.handle_request(request)


def _token(stack, email: str) -> str:
    mail = stack.store.fetch_inbox(email)[-1]
    return next(line.strip() for line in mail.body.splitlines() if line.startswith("    "))


def test_pairing_is_single_use(stack, tmp_path):
    alice = stack.add_user("Alice", "A", "alice@c.example", start_agent=False, pair=False)
    client = stack.new_client(alice.email, home=tmp_path / "c")
    png = tmp_path / "qr.png"
    first = client.init_pairing(png)
    assert png.exists()
    assert client.init_pairing(png) == first  # re-shown until scanned
    with pytest.raises(Conflict) as e:
        client.run_task(ActionRequest("encrypt", "x", alice.email, (alice.email,)))
    assert e.value.code == "not-paired"

    alice.agent.pair(str(png))
    assert client.confirm_pairing()
    assert not png.exists()  # taken off the screen
    with pytest.raises(Conflict) as e:
        client.init_pairing(png)
    assert e.value.code == "already-paired"
    # another phone presenting the same payload is turned away by the server
    bob = stack.add_user("Bob", "B", "bob@c.example", start_agent=False, pair=False)
    with pytest.raises(Conflict):
        bob.agent.pair(first)
    # configuration survives a restart, still paired, key never re-shown
    again = stack.new_client("ignored@c.example", home=tmp_path / "c")
    assert again.account_email == alice.email and again.config.paired
    with pytest.raises(Conflict):
        again.init_pairing()


def test_plain_send_never_touches_broker(stack):
    alice = stack.add_user("Alice", "A", "alice@c.example", start_agent=False)
    counting = Counting()
    client = Client(alice.email, ServerAPI(stack.server_url, transport=counting), stack.mail_api())
    report = client.send_email(OutgoingEmail(["bob@c.example", "carol@c.example"], "hi", BODY, encrypt=False))
    assert report.status == "sent-plain" and len(report.message_ids) == 2
    assert counting.paths == []
    [mail] = stack.store.fetch_inbox("bob@c.example")
    assert mail.body == BODY and not is_meg_message(mail)
    shown = client.receive_email(mail)
    assert shown.body == BODY and not shown.encrypted
    assert counting.paths == []


def test_encrypted_send_and_receive(stack):
    alice = stack.add_user("Alice", "A", "alice@c.example")
    bob = stack.add_user("Bob", "B", "bob@c.example")
    report = alice.client.send_email(OutgoingEmail([bob.email], "secret", BODY))
    assert report.status == "sent-encrypted"
    [mail] = bob.client.inbox()
    assert is_meg_message(mail) and mail.subject == "secret"
    assert BODY not in mail.body and mail.body.startswith("-----BEGIN MEG MESSAGE-----")
    shown = bob.client.receive_email(mail)
    assert shown.body == BODY and shown.encrypted and shown.verified_sender == alice.email
    # the stored copy is untouched by reading
    assert stack.store.fetch_inbox(bob.email)[0].body == mail.body
    # the sender can read their own sent copy
    assert alice.client.receive_email(mail).body == BODY


def test_unknown_recipient_gets_invitation(stack):
    alice = stack.add_user("Alice", "A", "alice@c.example")
    report = alice.client.send_email(OutgoingEmail(["carol@c.example"], "secret", BODY))
    assert report.status == "invited" and report.invited == ["carol@c.example"]
    [invite] = stack.store.fetch_inbox("carol@c.example")
    assert alice.email in invite.subject and alice.email in invite.body
    assert BODY not in invite.body and not is_meg_message(invite)
    assert all(BODY not in m.body for m in stack.store.all_mail())


def test_tampered_mail_warns_and_withholds(stack):
    alice = stack.add_user("Alice", "A", "alice@c.example")
    bob = stack.add_user("Bob", "B", "bob@c.example")
    alice.client.send_email(OutgoingEmail([bob.email], "s", BODY))
    [mail] = bob.client.inbox()
    lines = mail.body.splitlines()
    lines[2] = lines[2][:10] + ("A" if lines[2][10] != "A" else "B") + lines[2][11:]
    damaged = StoredMail(mail.id, mail.to, mail.sender, mail.headers, "\n".join(lines), mail.received_at)
    with pytest.raises(MegError) as e:
        bob.client.receive_email(damaged)
    assert e.value.code in ("tamper-detected", "parse-error", "signature-invalid")
    assert BODY not in str(e.value)


def test_signature_failure_message(stack, people):
    eve = people[4]
    bob = stack.add_user("Bob", "B", "bob@c.example")
    from meg.crypto import sign_and_encrypt

    env = sign_and_encrypt(BODY.encode(), eve.unlocked, [bob.agent.state.keypair.public_key])
    forged = StoredMail("id", bob.email, "alice@c.example", (("X-MEG", "1"),), env.armor(), time.time())
    with pytest.raises(SignatureInvalid) as e:
        bob.client.receive_email(forged)
    assert e.value.message.startswith("Warning:")
    assert "task_id" in e.value.detail


def test_device_locked_then_unlock(stack):
    alice = stack.add_user("Alice", "A", "alice@c.example")
    bob = stack.add_user("Bob", "B", "bob@c.example")
    alice.agent.close_app()
    with pytest.raises(DeviceLocked) as e:
        alice.client.send_email(OutgoingEmail([bob.email], "s", BODY))
    assert e.value.message == RELOGIN_MESSAGE and e.value.detail["task_id"]
    alice.agent.open_app(alice.password)
    assert alice.client.send_email(OutgoingEmail([bob.email], "s", BODY)).status == "sent-encrypted"


def test_poll_timeout_then_resume(stack):
    alice = stack.add_user("Alice", "A", "alice@c.example", start_agent=False)
    alice.client.poll_timeout = 0.2
    req = ActionRequest("encrypt", BODY, alice.email, (alice.email,))
    with pytest.raises(PollTimeout) as e:
        alice.client.run_task(req)
    task_id = e.value.detail["task_id"]
    assert e.value.code == "timeout"
    alice.start_agent(0.1)
    alice.client.poll_timeout = 10
    result = alice.client.resume(task_id, "encrypt")
    assert result.body.startswith("-----BEGIN MEG MESSAGE-----")


def test_concurrent_send_and_receive(stack):
    alice = stack.add_user("Alice", "A", "alice@c.example")
    bob = stack.add_user("Bob", "B", "bob@c.example")
    alice.client.send_email(OutgoingEmail([bob.email], "s", BODY))
    [mail] = bob.client.inbox()
    out = {}

    def reader():
        out["read"] = bob.client.receive_email(mail).body

    def writer():
        out["sent"] = bob.client.send_email(OutgoingEmail([alice.email], "re", "ok")).status

    threads = [threading.Thread(target=reader), threading.Thread(target=writer)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(20)
    assert out == {"read": BODY, "sent": "sent-encrypted"}


def test_revocation_through_client(stack):
    alice = stack.add_user("Alice", "A", "alice@c.example")
    bob = stack.add_user("Bob", "B", "bob@c.example")
    bob.client.revoke_my_key()
    bob.client.complete_revocation(_token(stack, bob.email) + "\n")
    with pytest.raises(MegError) as e:
        alice.client.send_email(OutgoingEmail([bob.email], "s", BODY))
    assert e.value.code == "recipient-revoked"


def test_outgoing_validation():
    with pytest.raises(InvalidArgument):
        OutgoingEmail([], "s", "b")


def test_qr_payload_has_no_account_secret(stack):
    alice = stack.add_user("Alice", "A", "alice@c.example", start_agent=False, pair=False)
    client = stack.new_client(alice.email)
    payload = client.init_pairing()
    assert QrPayload.from_json(payload.to_json()).server_url == stack.server_url
    assert alice.password not in payload.to_json()
