"""Run the whole system on localhost inside one process.

Used by the benchmark driver and the integration tests: real HTTP over
loopback, real crypto, one agent thread per enrolled user.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import mailsim, server
from .agent import Agent
from .api import MailAPI, ServerAPI
from .broker import Broker, ServerConfig
from .client import Client
from .crypto import UserIdentity
from .httpkit import ServiceThread
from .timing import NULL, Recorder

log = logging.getLogger(__name__)


@dataclass
class User:
    identity: UserIdentity
    password: str
    agent: Agent
    client: Client
    thread: threading.Thread | None = None

    @property
    def email(self) -> str:
        return self.identity.email

    def start_agent(self, wait_s: float = 0.5) -> None:
        if self.thread is not None and self.thread.is_alive():
            return
        self.agent.reset_shutdown()
        self.thread = threading.Thread(
            target=self.agent.run_loop, kwargs={"wait_s": wait_s}, name=f"agent-{self.email}", daemon=True
        )
        self.thread.start()

    def stop_agent(self) -> None:
        self.agent.shutdown()
        if self.thread is not None:
            self.thread.join(timeout=10)
            self.thread = None


@dataclass
class LocalStack:
    config: ServerConfig = field(default_factory=ServerConfig)
    recorder: Recorder = NULL
    poll_interval: float = 0.1
    agent_wait_s: float = 0.5

    def __post_init__(self) -> None:
        self.store = mailsim.MailStore()
        self.mail_service = ServiceThread(mailsim.build_app(self.store))
        self.broker = Broker(self.config, mailer=self.store.send)
        self.server_service = ServiceThread(server.build_app(self.broker, self.recorder))
        self.users: dict[str, User] = {}

    @property
    def server_url(self) -> str:
        return self.server_service.url

    @property
    def mail_url(self) -> str:
        return self.mail_service.url

    def start(self) -> "LocalStack":
        self.mail_service.start()
        self.server_service.start()
        return self

    def stop(self) -> None:
        for user in self.users.values():
            user.stop_agent()
        self.server_service.stop()
        self.mail_service.stop()
        self.broker.close()

    def __enter__(self) -> "LocalStack":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()

    def server_api(self, **kw) -> ServerAPI:
        return ServerAPI(self.server_url, **kw)

    def mail_api(self, **kw) -> MailAPI:
        return MailAPI(self.mail_url, **kw)

    def new_client(self, email: str, home: str | Path | None = None, **kw) -> Client:
        kw.setdefault("poll_interval", self.poll_interval)
        kw.setdefault("recorder", self.recorder)
        return Client(email, self.server_api(), self.mail_api(), home, **kw)

    def new_agent(self, home: str | Path | None = None) -> Agent:
        return Agent(self.server_api(), home, recorder=self.recorder)

    def add_user(
        self,
        first: str,
        last: str,
        email: str,
        password: str = "correct horse battery staple",
        *,
        phone: str = "+15555550100",
        start_agent: bool = True,
        pair: bool = True,
    ) -> User:
        identity = UserIdentity(first, last, phone, email)
        agent = self.new_agent()
        agent.enroll(identity, password)
        client = self.new_client(email)
        if pair:
            agent.pair(client.init_pairing())
            client.confirm_pairing()
        user = User(identity, password, agent, client)
        self.users[email] = user
        if start_agent:
            user.start_agent(self.agent_wait_s)
        return user
