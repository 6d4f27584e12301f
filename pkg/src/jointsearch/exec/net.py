"""TCP transport for the dispatcher: a master server and a worker loop."""
from __future__ import annotations

import logging
import socket
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

from .dispatch import HEARTBEAT_INTERVAL, LIVENESS_WINDOW, Dispatcher
from .protocol import (JobRequest, JobResult, ProtocolError, heartbeat, recv_message,
                       register, send_message, shutdown)

log = logging.getLogger(__name__)


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


class MasterServer:
    """Accepts worker connections and feeds them through a :class:`Dispatcher`."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 liveness_window: float = LIVENESS_WINDOW, tick: float = 1.0) -> None:
        self.dispatcher = Dispatcher(self._send, liveness_window=liveness_window)
        self._conns: dict[str, socket.socket] = {}
        self._send_locks: dict[str, threading.Lock] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._tick = tick
        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()[:2]
        self._threads: list[threading.Thread] = []

    def start(self) -> "MasterServer":
        for target in (self._accept_loop, self._liveness_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _send(self, worker_id: str, msg: dict) -> None:
        with self._lock:
            conn = self._conns.get(worker_id)
            lock = self._send_locks.get(worker_id)
        if conn is None:
            raise OSError(f"no connection for worker {worker_id}")
        with lock:
            send_message(conn, msg)

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _liveness_loop(self) -> None:
        while not self._stop.wait(self._tick):
            self.dispatcher.check_liveness()

    def _serve(self, conn: socket.socket) -> None:
        worker_id = None
        try:
            msg = recv_message(conn)
            if msg is None or msg["type"] != "register":
                raise ProtocolError("first message must be a registration")
            worker_id = str(msg["worker_id"])
            with self._lock:
                self._conns[worker_id] = conn
                self._send_locks[worker_id] = threading.Lock()
            self.dispatcher.register(worker_id, int(msg.get("capacity", 1)))
            while not self._stop.is_set():
                msg = recv_message(conn)
                if msg is None:
                    break
                if msg["type"] == "heartbeat":
                    self.dispatcher.heartbeat(worker_id)
                elif msg["type"] == "result":
                    self.dispatcher.heartbeat(worker_id)
                    self.dispatcher.handle_result(worker_id, JobResult.from_message(msg))
                else:
                    log.warning("ignoring %r message from %s", msg["type"], worker_id)
        except (OSError, ProtocolError, KeyError, ValueError) as exc:
            log.warning("worker connection %s closed: %s", worker_id, exc)
        finally:
            if worker_id is not None:
                with self._lock:
                    if self._conns.get(worker_id) is conn:
                        del self._conns[worker_id]
                self.dispatcher.disconnect(worker_id)
            conn.close()

    def close(self) -> None:
        self._stop.set()
        with self._lock:
            conns = list(self._conns.items())
        for wid, conn in conns:
            try:
                with self._send_locks[wid]:
                    send_message(conn, shutdown())
            except OSError:
                pass
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        self._listener.close()


def run_worker(address: str | tuple[str, int], evaluate: Callable[[JobRequest], JobResult],
               worker_id: str | None = None, capacity: int = 1,
               heartbeat_interval: float = HEARTBEAT_INTERVAL,
               stop: threading.Event | None = None) -> None:
    """Serve jobs from a master until it sends ``shutdown`` or disconnects."""
    if isinstance(address, str):
        address = parse_address(address)
    worker_id = worker_id or f"worker-{uuid.uuid4().hex[:8]}"
    stop = stop or threading.Event()
    sock = socket.create_connection(address)
    send_lock = threading.Lock()

    def send(msg) -> None:
        with send_lock:
            send_message(sock, msg)

    def beat() -> None:
        while not stop.wait(heartbeat_interval):
            try:
                send(heartbeat(worker_id))
            except OSError:
                return

    def work(request: JobRequest) -> None:
        try:
            result = evaluate(request)
        except Exception as exc:  # evaluator bugs become failed results
            log.exception("evaluation of trial %s failed", request.trial_id)
            result = JobResult.failed(request, f"worker exception: {exc}")
        if stop.is_set():
            return
        try:
            send(result)
        except OSError:
            stop.set()

    send(register(worker_id, capacity))
    threading.Thread(target=beat, daemon=True).start()
    pool = ThreadPoolExecutor(max_workers=capacity)
    try:
        while not stop.is_set():
            try:
                msg = recv_message(sock)
            except (OSError, ProtocolError):
                break
            if msg is None or msg["type"] == "shutdown":
                break
            if msg["type"] == "job":
                pool.submit(work, JobRequest.from_message(msg))
    finally:
        stop.set()
        pool.shutdown(wait=False, cancel_futures=True)
        sock.close()


def wait_for_workers(server: MasterServer, n: int, timeout: float) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if len(server.dispatcher.workers) >= n:
            return True
        time.sleep(0.05)
    return False
