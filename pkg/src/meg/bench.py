"""End-to-end latency benchmark with per-component attribution.

Each trial is timed from the client's side and split three ways:

* mobile: the agent's own span, from task in hand to result handed back;
* server: the client's submit-to-result window minus the mobile span;
* client: everything else the client did (framing, AES, unwrapping).

``mobile + server + client`` therefore equals the trial total. The server
also time-stamps submit arrival and result departure, which gives a second,
directly instrumented server figure to check the subtraction against.
"""

from __future__ import annotations

import json
import math
import os
import platform
import statistics
import sys
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

from .errors import InvalidArgument, MegError
from .protocol import ActionRequest
from .timing import Recorder

KINDS = ("decryption", "encryption")
COMPONENTS = ("mobile", "server", "client_aes", "client", "aggregate")

PRESET_TEXT = (
    "Hi Bob, the quarterly numbers are attached below in plain words. Revenue held steady, "
    "costs dropped a little, and the audit found nothing new. Please keep this between us "
    "until the board meeting on Thursday. Let me know if the figures look off to you. "
    "Thanks, Alice. "
)


def preset_email(length: int = 300) -> str:
    if length < 1:
        raise InvalidArgument("message length must be positive")
    reps = length // len(PRESET_TEXT) + 1
    return (PRESET_TEXT * reps)[:length]


@dataclass(frozen=True)
class TrialTiming:
    task_kind: str
    mobile_s: float
    server_s: float
    client_s: float
    client_aes_s: float
    total_s: float
    server_direct_s: float | None = None
    task_id: str = ""

    @property
    def component_sum(self) -> float:
        return self.mobile_s + self.server_s + self.client_s


@dataclass(frozen=True)
class BenchStats:
    n: int
    median: float
    mean: float
    stddev: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def compute_stats(samples: Iterable[float]) -> BenchStats:
    """n, median (midpoint for even n), mean and sample standard deviation."""
    data = [float(x) for x in samples]
    if not data:
        raise InvalidArgument("cannot summarise an empty sample")
    if any(not math.isfinite(x) for x in data):
        raise InvalidArgument("samples must be finite")
    sd = statistics.stdev(data) if len(data) > 1 else 0.0
    return BenchStats(len(data), statistics.median(data), statistics.mean(data), sd)


def _component_values(trials: Sequence[TrialTiming], component: str) -> list[float]:
    attr = {
        "mobile": "mobile_s",
        "server": "server_s",
        "client": "client_s",
        "client_aes": "client_aes_s",
        "aggregate": "total_s",
    }[component]
    return [getattr(t, attr) for t in trials]


@dataclass
class BenchReport:
    environment: dict[str, Any]
    message_len: int
    stats: dict[str, dict[str, BenchStats]]
    trials: list[TrialTiming] = field(default_factory=list)

    @classmethod
    def from_trials(cls, trials: Sequence[TrialTiming], message_len: int, environment: dict[str, Any]) -> "BenchReport":
        stats: dict[str, dict[str, BenchStats]] = {}
        for kind in KINDS:
            subset = [t for t in trials if t.task_kind == kind]
            if subset:
                stats[kind] = {c: compute_stats(_component_values(subset, c)) for c in COMPONENTS}
        return cls(dict(environment), message_len, stats, list(trials))

    def to_dict(self) -> dict[str, Any]:
        return {
            "environment": self.environment,
            "message_len": self.message_len,
            "stats": {k: {c: s.to_dict() for c, s in comp.items()} for k, comp in self.stats.items()},
            "trials": [asdict(t) for t in self.trials],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BenchReport":
        return cls(
            environment=dict(data["environment"]),
            message_len=int(data["message_len"]),
            stats={k: {c: BenchStats(**s) for c, s in comp.items()} for k, comp in data["stats"].items()},
            trials=[TrialTiming(**t) for t in data.get("trials", [])],
        )


def describe_environment() -> dict[str, Any]:
    return {
        "mobile": "in-process agent thread (simulated phone)",
        "server": "in-process broker over HTTP/1.1 on loopback",
        "client": "in-process client library",
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpus": os.cpu_count(),
        "python": sys.version.split()[0],
    }


# -- rendering ---------------------------------------------------------------------

_TABLES = (
    ("Mobile benchmarking results", [("mobile", None)]),
    ("Server benchmarking results", [("server", None)]),
    ("Client benchmarking results", [("client_aes", "AES"), ("client", "total")]),
    ("Aggregated benchmarking results", [("aggregate", None)]),
)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def render_report(report: BenchReport, format: str = "table") -> str:
    if not report.stats or any("aggregate" not in comp or comp["aggregate"].n == 0 for comp in report.stats.values()):
        raise InvalidArgument("report has no aggregate statistics")
    if format == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if format != "table":
        raise InvalidArgument(f"unknown report format {format!r}")

    out: list[str] = []
    env = report.environment
    out.append(f"MEG benchmark ({report.message_len}-character preset email)")
    out.append("")
    out.append("Benchmarking environment")
    width = max((len(k) for k in env), default=0)
    for key in sorted(env):
        out.append(f"  {key.ljust(width)}  {env[key]}")
    kinds = [k for k in KINDS if k in report.stats]
    for title, rows in _TABLES:
        with_task = rows[0][1] is not None
        out.append("")
        out.append(title)
        head = f"{'':<12}" + (f"{'Task':<7}" if with_task else "") + f"{'n':>4}{'median (s)':>12}{'mu (s)':>10}{'sigma (s)':>11}"
        out.append(head)
        out.append("-" * len(head))
        for kind in kinds:
            for i, (component, task) in enumerate(rows):
                s = report.stats[kind][component]
                label = kind.capitalize() if i == 0 else ""
                line = f"{label:<12}" + (f"{task:<7}" if with_task else "")
                line += f"{s.n:>4}{_fmt(s.median):>12}{_fmt(s.mean):>10}{_fmt(s.stddev):>11}"
                out.append(line)
    return "\n".join(out) + "\n"


# -- driver ------------------------------------------------------------------------


def attribute_trial(kind: str, recorder: Recorder, task_id: str) -> TrialTiming:
    """Split one recorded round trip into mobile/server/client time."""
    recorder.wait_for(task_id, "server_result_out", timeout=1.0)
    m = recorder.marks(task_id)
    spans = recorder.spans(task_id)
    try:
        start, submit, result_in, end = m["client_start"], m["client_submit_start"], m["client_result_in"], m["client_end"]
        mobile = spans["mobile"]
    except KeyError as exc:
        raise MegError(f"trial {task_id} is missing timing mark {exc}", code="bench-failed", task_id=task_id) from None
    window = result_in - submit
    server = window - mobile
    client = (end - start) - window
    direct = None
    if "server_submit_in" in m and "server_result_out" in m:
        direct = (m["server_result_out"] - m["server_submit_in"]) - mobile
    return TrialTiming(
        task_kind=kind,
        mobile_s=mobile,
        server_s=server,
        client_s=client,
        client_aes_s=spans.get("client_aes", 0.0),
        total_s=end - start,
        server_direct_s=direct,
        task_id=task_id,
    )


def run_benchmark(
    n: int = 20,
    message_len: int = 300,
    *,
    poll_interval: float = 0.1,
) -> BenchReport:
    """Run ``n`` encryption and ``n`` decryption trials serially on localhost."""
    from .stack import LocalStack

    if n < 1:
        raise InvalidArgument("n must be at least 1")
    body = preset_email(message_len)
    recorder = Recorder()
    trials: list[TrialTiming] = []
    with LocalStack(recorder=recorder, poll_interval=poll_interval) as stack:
        alice = stack.add_user("Alice", "Sender", "alice@bench.example")
        bob = stack.add_user("Bob", "Receiver", "bob@bench.example")
        for _ in range(n):
            enc = ActionRequest("encrypt", body, alice.email, (bob.email,))
            try:
                sealed = alice.client.run_task(enc)
            except MegError as exc:
                raise MegError(f"encryption trial failed: {exc.message}", code="bench-failed", **exc.detail) from exc
            trials.append(attribute_trial("encryption", recorder, _last_task(alice)))

            dec = ActionRequest("decrypt", sealed.body, alice.email, (bob.email,))
            try:
                opened = bob.client.run_task(dec)
            except MegError as exc:
                raise MegError(f"decryption trial failed: {exc.message}", code="bench-failed", **exc.detail) from exc
            task_id = _last_task(bob)
            if opened.body != body:
                raise MegError("decryption trial returned the wrong text", code="bench-failed", task_id=task_id)
            trials.append(attribute_trial("decryption", recorder, task_id))
    return BenchReport.from_trials(trials, message_len, describe_environment())


def _last_task(user) -> str:
    task_id = user.client.last_task_id
    if task_id is None:
        raise MegError("client did not record a task id", code="bench-failed")
    return task_id
