"""Job coordinator for remote workers.

:class:`Dispatcher` holds all coordinator state and is driven by explicit
calls (``register``, ``heartbeat``, ``submit``, ``handle_result``,
``check_liveness``), so it can be tested against a fake clock without
sockets. Outgoing messages go through the ``send(worker_id, message)``
callback.
"""
from __future__ import annotations

import logging
import queue
import threading
import time
from collections import deque
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Callable

from .protocol import JobRequest, JobResult

log = logging.getLogger(__name__)

HEARTBEAT_INTERVAL = 5.0
LIVENESS_WINDOW = 15.0
MAX_ATTEMPTS = 2  # first assignment plus one reassignment


@dataclass
class WorkerInfo:
    worker_id: str
    capacity: int
    last_heartbeat: float
    in_flight: set = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"worker capacity must be >= 1, got {self.capacity}")

    @property
    def free(self) -> int:
        return self.capacity - len(self.in_flight)


@dataclass
class _Job:
    request: JobRequest
    future: Future
    attempts: int = 0
    worker: str | None = None


class Dispatcher:
    def __init__(self, send: Callable[[str, dict], None], clock: Callable[[], float] = time.monotonic,
                 liveness_window: float = LIVENESS_WINDOW, max_attempts: int = MAX_ATTEMPTS) -> None:
        self._send = send
        self.clock = clock
        self.liveness_window = liveness_window
        self.max_attempts = max_attempts
        self.workers: dict[str, WorkerInfo] = {}
        self.results: queue.Queue[JobResult] = queue.Queue()
        self._jobs: dict[tuple, _Job] = {}
        self._queue: deque[tuple] = deque()
        self._delivered: set[tuple] = set()
        self._lock = threading.RLock()
        self.assignments: list[tuple[tuple, str]] = []
        self.discarded: list[JobResult] = []

    # -- worker lifecycle ------------------------------------------------------
    def register(self, worker_id: str, capacity: int) -> None:
        with self._lock:
            if worker_id in self.workers:
                self._lose_worker(worker_id, "re-registered")
            self.workers[worker_id] = WorkerInfo(worker_id, capacity, self.clock())
            log.info("worker %s registered with capacity %d", worker_id, capacity)
            self._pump()

    def heartbeat(self, worker_id: str) -> None:
        with self._lock:
            w = self.workers.get(worker_id)
            if w is not None:
                w.last_heartbeat = self.clock()

    def is_live(self, w: WorkerInfo) -> bool:
        return self.clock() - w.last_heartbeat <= self.liveness_window

    def check_liveness(self) -> list[str]:
        """Drop workers whose last heartbeat is older than the liveness window."""
        with self._lock:
            dead = [wid for wid, w in sorted(self.workers.items()) if not self.is_live(w)]
            for wid in dead:
                self._lose_worker(wid, "missed heartbeats")
            self._pump()
            return dead

    def disconnect(self, worker_id: str) -> None:
        with self._lock:
            if worker_id in self.workers:
                self._lose_worker(worker_id, "connection lost")
                self._pump()

    def _lose_worker(self, worker_id: str, reason: str) -> None:
        w = self.workers.pop(worker_id)
        log.warning("worker %s lost (%s); %d job(s) in flight", worker_id, reason, len(w.in_flight))
        for key in sorted(w.in_flight):
            job = self._jobs[key]
            job.worker = None
            if job.attempts < self.max_attempts:
                self._queue.appendleft(key)
            else:
                self._deliver(JobResult.failed(job.request, f"worker lost ({reason})"))

    # -- jobs ------------------------------------------------------------------
    def submit(self, request: JobRequest) -> Future:
        with self._lock:
            key = request.key
            if key in self._jobs or key in self._delivered:
                raise ValueError(f"job {key} was already submitted")
            job = _Job(request, Future())
            self._jobs[key] = job
            self._queue.append(key)
            self._pump()
            return job.future

    def _pick_worker(self) -> WorkerInfo | None:
        live = [w for w in self.workers.values() if w.free > 0 and self.is_live(w)]
        if not live:
            return None
        return min(live, key=lambda w: (len(w.in_flight), w.worker_id))

    def _pump(self) -> None:
        while self._queue:
            w = self._pick_worker()
            if w is None:
                return
            key = self._queue.popleft()
            job = self._jobs[key]
            job.attempts += 1
            job.worker = w.worker_id
            w.in_flight.add(key)
            self.assignments.append((key, w.worker_id))
            try:
                self._send(w.worker_id, job.request.to_message())
            except OSError as exc:
                log.warning("send to %s failed: %s", w.worker_id, exc)
                self._lose_worker(w.worker_id, "send failed")

    def handle_result(self, worker_id: str, result: JobResult) -> bool:
        """Accept the first result per job; later duplicates are discarded."""
        with self._lock:
            key = result.key
            w = self.workers.get(worker_id)
            if w is not None:
                w.in_flight.discard(key)
            job = self._jobs.get(key)
            if job is None:
                log.warning("discarding %s result for %s from %s",
                            "duplicate" if key in self._delivered else "unknown", key, worker_id)
                self.discarded.append(result)
                self._pump()
                return False
            if job.worker is not None and job.worker != worker_id:
                holder = self.workers.get(job.worker)
                if holder is not None:
                    holder.in_flight.discard(key)
            try:
                self._queue.remove(key)
            except ValueError:
                pass
            self._deliver(result)
            self._pump()
            return True

    def _deliver(self, result: JobResult) -> None:
        job = self._jobs.pop(result.key)
        self._delivered.add(result.key)
        job.future.set_result(result)
        self.results.put(result)

    @property
    def capacity(self) -> int:
        with self._lock:
            return sum(w.capacity for w in self.workers.values())

    @property
    def outstanding(self) -> int:
        with self._lock:
            return len(self._jobs)


def dispatch(pool: Dispatcher, request: JobRequest) -> Future:
    return pool.submit(request)
