"""The optimization loop.

:func:`run` asks the scheduler what to do next, proposes configurations with
the sampler, hands jobs to an executor and records everything in a
:class:`~jointsearch.history.RunHistory` (optionally streamed to a history
file as it happens).
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .exec.executors import InlineExecutor
from .exec.protocol import JobRequest, JobResult
from .exec.subproc import PROTOCOL_ERROR
from .history import (PENDING, HistoryWriter, Observation, RunHistory,
                      full_budget_equivalents)
from .sampler import SamplerParams, fit_and_propose
from .scheduler import BudgetLadder, Continue, Done, RequestNewConfig, SchedulerState, Wait
from .space import Configuration, SearchSpace

log = logging.getLogger(__name__)

STOP_KINDS = ("max_wall_clock", "max_total_budget", "max_full_budget_equivalents", "max_iterations")


class EvaluatorProtocolError(RuntimeError):
    """The evaluator keeps producing malformed results; the run is aborted."""


@dataclass(frozen=True)
class StoppingCondition:
    """When to stop issuing work.

    ``max_iterations`` counts completed Successive Halving rungs, so a limit
    of 1 stops right after the first bracket's base rung has been evaluated.
    """

    kind: str
    limit: float

    def __post_init__(self) -> None:
        if self.kind not in STOP_KINDS:
            raise ValueError(f"unknown stopping condition {self.kind!r}")
        if not self.limit > 0:
            raise ValueError(f"stopping limit must be positive, got {self.limit}")

    def reached(self, history: RunHistory, state: SchedulerState, now: float) -> bool:
        if self.kind == "max_wall_clock":
            return now >= self.limit
        if self.kind == "max_total_budget":
            return sum(o.cost for o in history.observations) >= self.limit
        if self.kind == "max_full_budget_equivalents":
            return full_budget_equivalents(history) >= self.limit
        return state.rungs_completed >= self.limit

    def to_dict(self) -> dict:
        return {self.kind: self.limit}

    @classmethod
    def from_dict(cls, doc: dict) -> "StoppingCondition":
        if not isinstance(doc, dict) or len(doc) != 1:
            raise ValueError(f"stop must hold exactly one of {STOP_KINDS}")
        (kind, limit), = doc.items()
        return cls(kind, limit)


def max_iterations(n: int) -> StoppingCondition:
    return StoppingCondition("max_iterations", n)


def max_full_budget_equivalents(n: float) -> StoppingCondition:
    return StoppingCondition("max_full_budget_equivalents", n)


class VirtualClock:
    """Simulated time that advances by the budget each result consumed."""

    def __init__(self) -> None:
        self.t = 0.0

    def now(self) -> float:
        return self.t

    def advance(self, dt: float) -> None:
        self.t += dt


class WallClock:
    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def advance(self, dt: float) -> None:
        pass


def run(space: SearchSpace, ladder: BudgetLadder, sampler_params: SamplerParams | None,
        evaluator: Any, stop: StoppingCondition | None, seed: int | None = 0, *,
        history_path: str | None = None, clock: VirtualClock | WallClock | None = None,
        max_brackets: int | None = None, overlap_brackets: bool = False,
        budget_unit: str = "s", meta: dict | None = None,
        max_protocol_failures: int = 10) -> RunHistory:
    """Run Hyperband with model-based proposals until ``stop`` fires or brackets run out.

    ``evaluator`` is either a callable ``fn(config, budget)`` (run inline on
    a virtual clock by default) or an executor from :mod:`jointsearch.exec`.
    When ``history_path`` is given the history is streamed there; after an
    abort the file still parses and unfinished trials remain ``pending``.
    """
    params = sampler_params or SamplerParams()
    if callable(evaluator) and not hasattr(evaluator, "submit"):
        executor = InlineExecutor(evaluator)
        clock = clock or VirtualClock()
    else:
        executor = evaluator
        clock = clock or WallClock()
    rng = np.random.default_rng(seed)
    state = SchedulerState(ladder, max_brackets=max_brackets, overlap_brackets=overlap_brackets)
    history = RunHistory(space, ladder, seed, params, meta)
    writer = HistoryWriter(history_path, history) if history_path else None
    configs: dict[int, Configuration] = {}
    in_flight = 0
    protocol_failures = 0

    def collect() -> None:
        nonlocal in_flight, protocol_failures
        result: JobResult = executor.get_result()
        in_flight -= 1
        clock.advance(result.consumed_budget)
        obs = history.resolve(
            result.trial_id, result.budget,
            loss=result.loss, status=result.status,
            consumed_budget=result.consumed_budget, finished_at=clock.now(),
            info={**history.get(result.trial_id, result.budget).info, **result.info},
        )
        if writer:
            writer.write(obs)
        state.record_result(result.trial_id, result.budget, result.loss)
        if result.status == "failed" and result.info.get("error", "").startswith(PROTOCOL_ERROR):
            protocol_failures += 1
            if protocol_failures >= max_protocol_failures:
                raise EvaluatorProtocolError(
                    f"{protocol_failures} consecutive malformed evaluator results; last: {result.info}")
        else:
            protocol_failures = 0

    try:
        while True:
            if stop is not None and stop.reached(history, state, clock.now()):
                log.info("stopping condition %s reached", stop.to_dict())
                break
            if executor.free_slots() <= 0:
                collect()
                continue
            action = state.next_action()
            if isinstance(action, Done):
                break
            if isinstance(action, Wait):
                collect()
                continue
            if isinstance(action, RequestNewConfig):
                config, info = fit_and_propose(history, space, params, rng)
                configs[action.trial_id] = config
            else:
                assert isinstance(action, Continue)
                config, info = configs[action.trial_id], {}
            info = {"bracket": str(action.bracket), **info}
            obs = history.append(Observation(
                action.trial_id, config, action.budget, status=PENDING,
                submitted_at=clock.now(), info=info))
            if writer:
                writer.write(obs)
            executor.submit(JobRequest(action.trial_id, config, action.budget, budget_unit))
            in_flight += 1
        while in_flight:
            collect()
    finally:
        if writer:
            writer.close()
    return history


def random_search(space: SearchSpace, evaluator: Callable[[dict, float], Any], budget: float,
                  stop: StoppingCondition, seed: int | None = 0) -> RunHistory:
    """Uniform random sampling, every configuration evaluated at ``budget``."""
    rng = np.random.default_rng(seed)
    ladder = BudgetLadder((float(budget),), 3)
    state = SchedulerState(ladder, max_brackets=0)
    history = RunHistory(space, ladder, seed, SamplerParams(random_fraction=1.0),
                         {"method": "random_search"})
    executor = InlineExecutor(evaluator)
    clock = VirtualClock()
    tid = 0
    while not stop.reached(history, state, clock.now()):
        config = space.sample_uniform(rng)
        history.append(Observation(tid, config, float(budget), submitted_at=clock.now()))
        executor.submit(JobRequest(tid, config, float(budget)))
        r = executor.get_result()
        clock.advance(r.consumed_budget)
        history.resolve(tid, float(budget), loss=r.loss, status=r.status,
                        consumed_budget=r.consumed_budget, finished_at=clock.now(), info=r.info)
        tid += 1
    return history


def replay_evaluator(history: RunHistory) -> Callable[[dict, float], Any]:
    """Evaluator that answers from a recorded history (for replay checks)."""
    table = {}
    for o in history.observations:
        if o.status != PENDING:
            table[(json.dumps(o.config, sort_keys=True), o.budget)] = o

    def evaluate(config: dict, budget: float):
        o = table[(json.dumps(config, sort_keys=True), budget)]
        return {"loss": o.loss, "consumed_budget": o.cost, "status": o.status}

    return evaluate


def best_loss(history: RunHistory, budget: float | None = None) -> float:
    """Smallest successful loss at ``budget`` (the ladder's largest by default)."""
    budget = history.ladder.b_max if budget is None else budget
    losses = [o.loss for o in history.successful(budget)]
    return min(losses) if losses else float("inf")
