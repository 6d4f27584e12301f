"""Evaluate one job by running a child process.

The child receives one JSON job line on stdin and must print one JSON result
line on stdout, e.g. ``{"loss": 0.31, "consumed_budget": 400}``. Optional keys
are ``status`` and ``info``. Losses are minimized: an evaluator that measures
accuracy has to report its negation (or the error rate) itself.
"""
from __future__ import annotations

import json
import math
import shlex
import subprocess
from typing import Sequence

from .protocol import JobRequest, JobResult, dumps

PROTOCOL_ERROR = "protocol"


class EvaluatorUnavailable(RuntimeError):
    """The evaluator command could not be started."""


def _command(command: str | Sequence[str]) -> list[str]:
    return shlex.split(command) if isinstance(command, str) else list(command)


def parse_result_line(line: str, request: JobRequest) -> JobResult:
    """Turn a child's output line into a result; malformed lines become failures."""
    try:
        doc = json.loads(line)
        if not isinstance(doc, dict):
            raise ValueError("result line is not an object")
        loss = doc.get("loss")
        consumed = doc.get("consumed_budget", request.budget)
        if isinstance(consumed, bool) or not isinstance(consumed, (int, float)):
            raise ValueError("consumed_budget must be a number")
        info = {str(k): str(v) for k, v in (doc.get("info") or {}).items()}
        status = doc.get("status", "success")
        if status == "failed" or loss is None:
            return JobResult(request.trial_id, request.budget, None, "failed", consumed,
                             {"error": "evaluator reported failure", **info})
        if isinstance(loss, bool) or not isinstance(loss, (int, float)) or not math.isfinite(loss):
            raise ValueError(f"loss must be a finite number, got {loss!r}")
        return JobResult(request.trial_id, request.budget, float(loss), "success", consumed, info)
    except (ValueError, TypeError, AttributeError) as exc:
        return JobResult.failed(request, f"{PROTOCOL_ERROR}: {exc}")


def run_subprocess_evaluator(command: str | Sequence[str], request: JobRequest,
                             timeout: float | None = None) -> JobResult:
    argv = _command(command)
    try:
        proc = subprocess.run(
            argv,
            input=dumps(request.to_message()).decode("utf-8") + "\n",
            capture_output=True,
            text=True,
            encoding="utf-8",
            timeout=timeout,
        )
    except subprocess.TimeoutExpired:
        return JobResult.failed(request, "timeout")
    except OSError as exc:
        raise EvaluatorUnavailable(f"cannot start {argv!r}: {exc}") from exc
    if proc.returncode != 0:
        return JobResult.failed(request, f"exit status {proc.returncode}")
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if not lines:
        return JobResult.failed(request, f"{PROTOCOL_ERROR}: no result line")
    return parse_result_line(lines[0], request)
