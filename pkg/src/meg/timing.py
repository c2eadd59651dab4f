"""Instrumentation hooks shared by the server, agent and client.

Components call :meth:`Recorder.mark` with a task id and a label; the bench
harness reads the marks back to attribute time per component. Marks use the
monotonic clock, so they are only comparable within one process.
"""

from __future__ import annotations

import threading
import time
from collections import defaultdict
from contextlib import contextmanager
from typing import Iterator


class Recorder:
    def __init__(self) -> None:
        self._lock = threading.Condition()
        self._marks: dict[str, dict[str, float]] = defaultdict(dict)
        self._spans: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))

    def mark(self, key: str, label: str, at: float | None = None) -> float:
        t = time.perf_counter() if at is None else at
        with self._lock:
            self._marks[key][label] = t
            self._lock.notify_all()
        return t

    def wait_for(self, key: str, label: str, timeout: float = 1.0) -> float | None:
        with self._lock:
            self._lock.wait_for(lambda: label in self._marks.get(key, {}), timeout)
            return self._marks.get(key, {}).get(label)

    def add(self, key: str, label: str, seconds: float) -> None:
        with self._lock:
            self._spans[key][label] += seconds

    @contextmanager
    def span(self, key: str, label: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(key, label, time.perf_counter() - start)

    def marks(self, key: str) -> dict[str, float]:
        with self._lock:
            return dict(self._marks.get(key, {}))

    def spans(self, key: str) -> dict[str, float]:
        with self._lock:
            return dict(self._spans.get(key, {}))

    def rekey(self, old: str, new: str) -> None:
        with self._lock:
            if old in self._marks:
                self._marks[new].update(self._marks.pop(old))
            if old in self._spans:
                for label, v in self._spans.pop(old).items():
                    self._spans[new][label] += v


class NullRecorder(Recorder):
    def mark(self, key: str, label: str, at: float | None = None) -> float:
        return time.perf_counter() if at is None else at

    def add(self, key: str, label: str, seconds: float) -> None:
        pass


NULL = NullRecorder()
