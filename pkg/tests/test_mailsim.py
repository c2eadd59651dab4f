from __future__ import annotations

import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meg.api import MailAPI
from meg.errors import InvalidArgument
from meg.httpkit import ServiceThread
from meg.mailsim import MailStore, StoredMail, build_app


class Tick:
    def __init__(self):
        self.t = 100.0

    def __call__(self):
        return self.t


def test_deliver_then_fetch():
    store = MailStore()
    mid = store.deliver("bob@x.org", "alice@x.org", "hi", [("Subject", "s")])
    [mail] = store.fetch_inbox("bob@x.org")
    assert mail.id == mid and mail.body == "hi" and mail.subject == "s" and mail.sender == "alice@x.org"
    assert store.fetch_inbox("nobody@x.org") == []


def test_order_preserved_and_since_filter():
    clock = Tick()
    store = MailStore(clock=clock)
    store.deliver("bob@x.org", "a@x.org", "one")
    clock.t = 200.0
    store.deliver("bob@x.org", "a@x.org", "two")
    clock.t = 150.0  # clock steps back; mailbox order still holds
    store.deliver("bob@x.org", "a@x.org", "three")
    box = store.fetch_inbox("bob@x.org")
    assert [m.body for m in box] == ["one", "two", "three"]
    assert [m.received_at for m in box] == sorted(m.received_at for m in box)
    assert [m.body for m in store.fetch_inbox("bob@x.org", since=150.0)] == ["two", "three"]


@pytest.mark.parametrize("to", ["", "bob", "a@b@c", "@x.org", "bob@", "bo b@x.org"])
def test_bad_addresses_rejected(to):
    with pytest.raises(InvalidArgument):
        MailStore().deliver(to, "a@x.org", "x")


def test_bad_sender_and_body_rejected():
    with pytest.raises(InvalidArgument):
        MailStore().deliver("b@x.org", "nobody", "x")
    with pytest.raises(InvalidArgument):
        MailStore().deliver("b@x.org", "a@x.org", b"bytes")


@settings(max_examples=200)
@given(bodies=st.lists(st.text(max_size=200), max_size=8))
def test_fetch_never_mutates(bodies):
    store = MailStore()
    for b in bodies:
        store.deliver("bob@x.org", "a@x.org", b, [("X-MEG", "1")])
    first = store.fetch_inbox("bob@x.org")
    first.clear()
    again = store.fetch_inbox("bob@x.org")
    assert [m.body for m in again] == bodies
    assert store.fetch_inbox("bob@x.org") == again
    for m in again:
        with pytest.raises(AttributeError):
            m.body = "changed"  # type: ignore[misc]


def test_dict_and_rfc5322_forms():
    store = MailStore()
    store.deliver("bob@x.org", "alice@x.org", "line1\nline2", [("Subject", "Hello"), ("X-MEG", "1")])
    [m] = store.fetch_inbox("bob@x.org")
    assert StoredMail.from_dict(m.to_dict()) == m
    text = m.to_rfc5322()
    head, body = text.split("\r\n\r\n", 1)
    assert head.splitlines() == ["From: alice@x.org", "To: bob@x.org", "Subject: Hello", "X-MEG: 1"]
    assert body == "line1\nline2"
    assert m.header("x-meg") == "1" and m.header("missing", "d") == "d"


def test_concurrent_delivery_exactly_once():
    store = MailStore()

    def worker(n):
        for i in range(50):
            store.deliver("bob@x.org", "a@x.org", f"{n}-{i}")

    threads = [threading.Thread(target=worker, args=(n,)) for n in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    bodies = [m.body for m in store.fetch_inbox("bob@x.org")]
    assert sorted(bodies) == sorted(f"{n}-{i}" for n in range(4) for i in range(50))
    for n in range(4):
        mine = [b for b in bodies if b.startswith(f"{n}-")]
        assert mine == [f"{n}-{i}" for i in range(50)]


def test_http_api():
    store = MailStore()
    with ServiceThread(build_app(store)) as svc:
        api = MailAPI(svc.url)
        mid = api.deliver("bob@x.org", "alice@x.org", "body", [("Subject", "s")])
        api.send("bob@x.org", "server@x.org", "subj", "second")
        box = api.fetch_inbox("bob@x.org")
        assert [m.id for m in box][0] == mid
        assert [m.subject for m in box] == ["s", "subj"]
        assert api.fetch_inbox("bob@x.org", since=box[1].received_at)[-1].body == "second"
        assert api.fetch_inbox("carol@x.org") == []
        with pytest.raises(InvalidArgument):
            api.deliver("not-an-address", "alice@x.org", "x")
        with pytest.raises(InvalidArgument):
            api._call("GET", "/v1/mail", params={"to": "bob@x.org", "since": "yesterday"})
        with pytest.raises(InvalidArgument):
            api._call("POST", "/v1/mail", json={"to": "bob@x.org"})
