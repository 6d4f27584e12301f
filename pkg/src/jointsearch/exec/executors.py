"""Execution backends used by the engine.

Every backend offers ``submit(request)``, ``get_result()`` (blocking),
``free_slots()`` and ``close()``.
"""
from __future__ import annotations

import math
import queue
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Sequence

from .net import MasterServer
from .protocol import JobRequest, JobResult
from .subproc import run_subprocess_evaluator

TIMEOUT_FACTOR = 3.0
TIMEOUT_GRACE = 60.0


def evaluator_timeout(budget: float, factor: float = TIMEOUT_FACTOR, grace: float = TIMEOUT_GRACE) -> float:
    return factor * budget + grace


def as_result(request: JobRequest, value: Any) -> JobResult:
    """Coerce what an in-process evaluator returned into a :class:`JobResult`.

    Accepted: a number (the loss), a mapping with ``loss`` and optional
    ``consumed_budget``/``info``/``status``, or a :class:`JobResult`.
    """
    if isinstance(value, JobResult):
        return value
    info: dict = {}
    consumed = request.budget
    if isinstance(value, dict):
        info = {str(k): str(v) for k, v in (value.get("info") or {}).items()}
        consumed = value.get("consumed_budget", consumed)
        if value.get("status") == "failed":
            return JobResult(request.trial_id, request.budget, None, "failed", consumed, info)
        value = value.get("loss")
    if value is None:
        return JobResult(request.trial_id, request.budget, None, "failed", consumed,
                         {"error": "no loss reported", **info})
    loss = float(value)
    if not math.isfinite(loss):
        return JobResult(request.trial_id, request.budget, None, "failed", consumed,
                         {"error": f"non-finite loss {loss!r}", **info})
    return JobResult(request.trial_id, request.budget, loss, "success", consumed, info)


def call_evaluator(fn: Callable, request: JobRequest) -> JobResult:
    try:
        return as_result(request, fn(request.config, request.budget))
    except Exception as exc:  # evaluator errors become failed trials
        return JobResult.failed(request, f"{type(exc).__name__}: {exc}")


class InlineExecutor:
    """Runs ``fn(config, budget)`` synchronously inside ``submit``."""

    def __init__(self, fn: Callable[[dict, float], Any]) -> None:
        self.fn = fn
        self._done: deque[JobResult] = deque()

    def free_slots(self) -> int:
        return 0 if self._done else 1

    def submit(self, request: JobRequest) -> None:
        self._done.append(call_evaluator(self.fn, request))

    def get_result(self) -> JobResult:
        return self._done.popleft()

    @property
    def in_flight(self) -> int:
        return len(self._done)

    def close(self) -> None:
        pass


class PoolExecutor:
    """Runs ``job(request) -> JobResult`` on a thread pool."""

    def __init__(self, job: Callable[[JobRequest], JobResult], parallelism: int = 1) -> None:
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        self.job = job
        self.parallelism = parallelism
        self._pool = ThreadPoolExecutor(max_workers=parallelism)
        self._results: queue.Queue = queue.Queue()
        self.in_flight = 0

    def free_slots(self) -> int:
        return self.parallelism - self.in_flight

    def submit(self, request: JobRequest) -> None:
        self.in_flight += 1
        fut = self._pool.submit(self.job, request)
        fut.add_done_callback(lambda f: self._results.put(f))

    def get_result(self) -> JobResult:
        fut = self._results.get()
        self.in_flight -= 1
        return fut.result()  # re-raises spawn failures

    def close(self) -> None:
        self._pool.shutdown(wait=True)


class SubprocessExecutor(PoolExecutor):
    def __init__(self, command: str | Sequence[str], parallelism: int = 1,
                 timeout_factor: float = TIMEOUT_FACTOR, timeout_grace: float = TIMEOUT_GRACE) -> None:
        def job(request: JobRequest) -> JobResult:
            timeout = evaluator_timeout(request.budget, timeout_factor, timeout_grace)
            return run_subprocess_evaluator(command, request, timeout)

        super().__init__(job, parallelism)


class RemoteExecutor:
    """Sends jobs to workers connected to a :class:`MasterServer`."""

    def __init__(self, server: MasterServer) -> None:
        self.server = server
        self.in_flight = 0

    def free_slots(self) -> int:
        return max(1, self.server.dispatcher.capacity) - self.in_flight

    def submit(self, request: JobRequest) -> None:
        self.in_flight += 1
        self.server.dispatcher.submit(request)

    def get_result(self) -> JobResult:
        result = self.server.dispatcher.results.get()
        self.in_flight -= 1
        return result

    def close(self) -> None:
        self.server.close()
