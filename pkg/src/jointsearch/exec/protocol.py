"""Messages exchanged with evaluators.

Socket framing is a 4-byte big-endian body length followed by a UTF-8 JSON
object whose ``"type"`` is one of :data:`MESSAGE_TYPES`:

``register``
    worker -> master: ``worker_id`` (str), ``capacity`` (int >= 1)
``job``
    master -> worker: ``trial_id``, ``config``, ``budget``, ``budget_unit``
``result``
    worker -> master: ``trial_id``, ``budget``, ``loss`` (number or null),
    ``status`` (``"success"``/``"failed"``), ``consumed_budget``, ``info``
``heartbeat``
    worker -> master: ``worker_id``
``shutdown``
    master -> worker, no further fields

Job and result bodies use the same key names as history observations.
The subprocess protocol sends the same job/result bodies, one per line and
without the length prefix.
"""
from __future__ import annotations

import json
import math
import socket
import struct
from dataclasses import dataclass, field
from typing import Any

MESSAGE_TYPES = ("register", "job", "result", "heartbeat", "shutdown")
HEADER = struct.Struct(">I")
MAX_BODY = 2**32 - 1


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class JobRequest:
    trial_id: int
    config: dict
    budget: float
    budget_unit: str = "s"

    @property
    def key(self) -> tuple[int, float]:
        return self.trial_id, self.budget

    def to_message(self) -> dict:
        return {"type": "job", "trial_id": self.trial_id, "config": self.config,
                "budget": self.budget, "budget_unit": self.budget_unit}

    @classmethod
    def from_message(cls, msg: dict) -> "JobRequest":
        try:
            return cls(msg["trial_id"], dict(msg["config"]), msg["budget"], msg.get("budget_unit", "s"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad job message: {exc}") from exc


@dataclass(frozen=True)
class JobResult:
    trial_id: int
    budget: float
    loss: float | None
    status: str
    consumed_budget: float
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status not in ("success", "failed"):
            raise ProtocolError(f"bad result status {self.status!r}")
        if self.status == "success" and (self.loss is None or not math.isfinite(self.loss)):
            raise ProtocolError("a successful result needs a finite loss")

    @property
    def key(self) -> tuple[int, float]:
        return self.trial_id, self.budget

    @classmethod
    def failed(cls, request: JobRequest, reason: str, consumed: float | None = None) -> "JobResult":
        return cls(request.trial_id, request.budget, None, "failed",
                   request.budget if consumed is None else consumed, {"error": reason})

    def to_message(self) -> dict:
        return {"type": "result", "trial_id": self.trial_id, "budget": self.budget,
                "loss": self.loss, "status": self.status,
                "consumed_budget": self.consumed_budget, "info": self.info}

    @classmethod
    def from_message(cls, msg: dict) -> "JobResult":
        try:
            info = msg.get("info") or {}
            return cls(msg["trial_id"], msg["budget"], msg.get("loss"), msg["status"],
                       msg["consumed_budget"], {str(k): str(v) for k, v in info.items()})
        except (KeyError, TypeError, AttributeError) as exc:
            raise ProtocolError(f"bad result message: {exc}") from exc


def heartbeat(worker_id: str) -> dict:
    return {"type": "heartbeat", "worker_id": worker_id}


def register(worker_id: str, capacity: int) -> dict:
    return {"type": "register", "worker_id": worker_id, "capacity": capacity}


def shutdown() -> dict:
    return {"type": "shutdown"}


def dumps(msg: dict) -> bytes:
    if not isinstance(msg, dict) or msg.get("type") not in MESSAGE_TYPES:
        raise ProtocolError(f"not a protocol message: {msg!r}")
    try:
        return json.dumps(msg, separators=(",", ":"), allow_nan=False, ensure_ascii=False).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"unencodable message: {exc}") from exc


def loads(body: bytes | str) -> dict:
    try:
        msg = json.loads(body)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed message body: {exc}") from exc
    if not isinstance(msg, dict) or msg.get("type") not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message: {msg!r}")
    return msg


def encode_message(msg: Any) -> bytes:
    """Frame a message (a dict, :class:`JobRequest` or :class:`JobResult`)."""
    if isinstance(msg, (JobRequest, JobResult)):
        msg = msg.to_message()
    body = dumps(msg)
    if len(body) > MAX_BODY:
        raise ProtocolError(f"message body of {len(body)} bytes exceeds the length prefix")
    return HEADER.pack(len(body)) + body


def decode_message(frame: bytes) -> dict:
    """Inverse of :func:`encode_message` for exactly one complete frame."""
    if len(frame) < HEADER.size:
        raise ProtocolError("truncated frame header")
    (n,) = HEADER.unpack_from(frame)
    if len(frame) != HEADER.size + n:
        raise ProtocolError(f"frame length {len(frame) - HEADER.size} does not match prefix {n}")
    return loads(frame[HEADER.size:])


class FrameReader:
    """Incremental decoder for a byte stream carrying framed messages."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[dict]:
        self._buf += data
        out = []
        while len(self._buf) >= HEADER.size:
            (n,) = HEADER.unpack_from(self._buf)
            if len(self._buf) < HEADER.size + n:
                break
            body = bytes(self._buf[HEADER.size:HEADER.size + n])
            del self._buf[:HEADER.size + n]
            out.append(loads(body))
        return out


def send_message(sock: socket.socket, msg: Any) -> None:
    sock.sendall(encode_message(msg))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def recv_message(sock: socket.socket) -> dict | None:
    """Read one framed message; ``None`` on a cleanly closed connection."""
    head = _recv_exact(sock, HEADER.size)
    if head is None:
        return None
    (n,) = HEADER.unpack(head)
    body = _recv_exact(sock, n)
    if body is None:
        raise ProtocolError("connection closed mid-message")
    return loads(body)
