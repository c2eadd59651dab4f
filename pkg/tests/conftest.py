from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from meg.crypto import UserIdentity, generate_keypair, unlock_private_key
from meg.stack import LocalStack

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "meg",
    deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow],
)
settings.load_profile("meg")

PASSWORD = "hunter2-but-longer"


class Person:
    def __init__(self, first: str, email: str):
        self.identity = UserIdentity(first, "Tester", "+15555550123", email)
        self.keypair, self.cert = generate_keypair(self.identity, PASSWORD)
        self.unlocked = unlock_private_key(self.keypair, PASSWORD)

    @property
    def public(self):
        return self.keypair.public_key


@pytest.fixture(scope="session")
def people() -> list[Person]:
    """A small pool of identities; key generation is slow on purpose (PBKDF2)."""
    names = ["alice", "bob", "carol", "dave", "erin", "frank"]
    return [Person(n.capitalize(), f"{n}@example.org") for n in names]


@pytest.fixture
def stack():
    with LocalStack(poll_interval=0.02, agent_wait_s=0.2) as s:
        yield s


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, title = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
