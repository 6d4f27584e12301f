"""Successive Halving / Hyperband bookkeeping.

The scheduler only deals in trial ids and budgets. It decides what should
happen next (:func:`next_action`) and absorbs results
(:meth:`SchedulerState.record_result`); configurations live in the engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

_EPS = 1e-9


class SchedulerError(RuntimeError):
    pass


@dataclass(frozen=True)
class BudgetLadder:
    budgets: tuple[float, ...]
    eta: float

    def __post_init__(self) -> None:
        if self.eta <= 1:
            raise SchedulerError(f"eta must be > 1, got {self.eta}")
        b = tuple(self.budgets)
        if not b or any(x <= 0 for x in b):
            raise SchedulerError("budgets must be a non-empty list of positive values")
        for lo, hi in zip(b, b[1:]):
            if abs(hi / lo - self.eta) > 1e-9 * self.eta:
                raise SchedulerError(f"budgets {lo} -> {hi} do not differ by eta={self.eta}")
        object.__setattr__(self, "budgets", b)

    @property
    def s_max(self) -> int:
        return len(self.budgets) - 1

    @property
    def b_min(self) -> float:
        return self.budgets[0]

    @property
    def b_max(self) -> float:
        return self.budgets[-1]

    def to_dict(self) -> dict:
        return {"budgets": list(self.budgets), "eta": self.eta}

    @classmethod
    def from_dict(cls, doc: dict) -> "BudgetLadder":
        return cls(tuple(doc["budgets"]), doc["eta"])


def _pow(eta: float, k: int):
    # exact for integral eta so that e.g. 10800 / 27 is exactly 400
    return int(eta) ** k if float(eta).is_integer() else eta ** k


def geometric_budgets(b_min: float, b_max: float, eta: float = 3) -> BudgetLadder:
    """Budgets ``b_max / eta**k`` for ``k = s_max..0``, anchored at ``b_max``.

    >>> geometric_budgets(400, 10800, 3).budgets
    (400.0, 1200.0, 3600.0, 10800.0)
    """
    if not (0 < b_min <= b_max) or not math.isfinite(b_max):
        raise SchedulerError(f"need 0 < b_min <= b_max, got {b_min}, {b_max}")
    if not eta > 1:
        raise SchedulerError(f"eta must be > 1, got {eta}")
    s_max = math.floor(math.log(b_max / b_min) / math.log(eta) + _EPS)
    budgets = tuple(float(b_max / _pow(eta, k)) for k in range(s_max, -1, -1))
    return BudgetLadder(budgets, eta)


def _floor_div(n: int, eta: float) -> int:
    if float(eta).is_integer():
        return n // int(eta)
    return math.floor(n / eta + _EPS)


def bracket_layout(s_max: int, s: int, eta: float = 3) -> list[tuple[int, int]]:
    """Rung ``(capacity, budget_index)`` pairs of the bracket with index ``s``.

    The base rung holds ``ceil((s_max + 1) / (s + 1) * eta**s)`` configurations
    and starts at budget index ``s_max - s``; every further rung keeps
    ``floor(capacity / eta)``.
    """
    if not 0 <= s <= s_max:
        raise SchedulerError(f"bracket index {s} outside [0, {s_max}]")
    if float(eta).is_integer():
        n0 = math.ceil(Fraction(s_max + 1, s + 1) * int(eta) ** s)
    else:
        n0 = math.ceil((s_max + 1) / (s + 1) * eta ** s - _EPS)
    layout = []
    cap = n0
    for i in range(s + 1):
        layout.append((cap, s_max - s + i))
        cap = _floor_div(cap, eta)
    return layout


PENDING = "pending"
SUCCESS = "success"
FAILED = "failed"


@dataclass
class RungEntry:
    trial_id: int
    status: str = PENDING
    loss: float | None = None

    @property
    def rank_loss(self) -> float:
        return self.loss if self.status == SUCCESS else math.inf


@dataclass
class Rung:
    budget: float
    capacity: int
    entries: list[RungEntry] = field(default_factory=list)
    # how many entries this rung will receive; unknown until promotion
    target: int | None = None

    @property
    def full(self) -> bool:
        limit = self.capacity if self.target is None else self.target
        return len(self.entries) >= limit

    @property
    def filled(self) -> bool:
        return self.target is not None and len(self.entries) >= self.target

    @property
    def resolved(self) -> bool:
        return all(e.status != PENDING for e in self.entries)

    def add(self, trial_id: int) -> RungEntry:
        if self.full:
            raise SchedulerError(f"rung at budget {self.budget} is full")
        if any(e.trial_id == trial_id for e in self.entries):
            raise SchedulerError(f"trial {trial_id} already in rung at budget {self.budget}")
        entry = RungEntry(trial_id)
        self.entries.append(entry)
        return entry

    def entry(self, trial_id: int) -> RungEntry | None:
        for e in self.entries:
            if e.trial_id == trial_id:
                return e
        return None


def promote(rung: Rung, eta: float, next_capacity: int | None = None) -> list[int]:
    """Trial ids to continue at the next budget, best first.

    Failed entries never qualify. Without ``next_capacity`` the best
    ``floor(n_successful / eta)`` are returned; with it, as many successful
    entries as the next rung can hold. Ties go to the earlier submission.
    """
    if not rung.resolved:
        raise SchedulerError("cannot promote from a rung with pending entries")
    ok = [(e.loss, pos, e.trial_id) for pos, e in enumerate(rung.entries) if e.status == SUCCESS]
    ok.sort()
    if next_capacity is None:
        k = _floor_div(len(ok), eta)
    else:
        k = min(next_capacity, len(ok))
    return [tid for _, _, tid in ok[:k]]


@dataclass
class Bracket:
    iteration: int
    s: int
    rungs: list[Rung]
    queued: list[int] = field(default_factory=list)
    promoted_from: int = -1
    stopped: bool = False

    @property
    def complete(self) -> bool:
        return self.stopped or self.promoted_from == len(self.rungs) - 1

    def find(self, trial_id: int, budget: float) -> RungEntry | None:
        for r in self.rungs:
            if r.budget == budget:
                return r.entry(trial_id)
        return None


@dataclass(frozen=True)
class RequestNewConfig:
    trial_id: int
    budget: float
    bracket: int


@dataclass(frozen=True)
class Continue:
    trial_id: int
    budget: float
    bracket: int


@dataclass(frozen=True)
class Wait:
    pass


@dataclass(frozen=True)
class Done:
    pass


Action = Union[RequestNewConfig, Continue, Wait, Done]


class SchedulerState:
    """Hyperband over a budget ladder.

    Brackets run in the order ``s_max, s_max - 1, ..., 0`` and the cycle
    repeats until ``max_brackets`` brackets have been opened (``None`` means
    cycle forever and leave stopping to the caller). With
    ``overlap_brackets`` a new bracket may be opened while the active ones
    only wait for results, which keeps parallel workers busy.
    """

    def __init__(self, ladder: BudgetLadder, max_brackets: int | None = None,
                 overlap_brackets: bool = False) -> None:
        self.ladder = ladder
        self.max_brackets = max_brackets
        self.overlap_brackets = overlap_brackets
        self.brackets: list[Bracket] = []
        self.next_trial_id = 0
        self.rungs_completed = 0
        self._trial_bracket: dict[int, int] = {}

    # -- bracket sequence ---------------------------------------------------
    def _bracket_s(self, iteration: int) -> int:
        s_max = self.ladder.s_max
        return s_max - iteration % (s_max + 1)

    def _open_bracket(self) -> Bracket:
        it = len(self.brackets)
        s = self._bracket_s(it)
        rungs = [Rung(self.ladder.budgets[bi], cap)
                 for cap, bi in bracket_layout(self.ladder.s_max, s, self.ladder.eta)]
        rungs[0].target = rungs[0].capacity
        b = Bracket(it, s, rungs)
        self.brackets.append(b)
        return b

    def _may_open(self) -> bool:
        return self.max_brackets is None or len(self.brackets) < self.max_brackets

    @property
    def active(self) -> list[Bracket]:
        return [b for b in self.brackets if not b.complete]

    # -- decisions ----------------------------------------------------------
    def _action_in(self, b: Bracket) -> Action | None:
        base = b.rungs[0]
        if not base.full:
            tid = self.next_trial_id
            self.next_trial_id += 1
            base.add(tid)
            self._trial_bracket[tid] = b.iteration
            return RequestNewConfig(tid, base.budget, b.iteration)
        if b.queued:
            tid = b.queued.pop(0)
            rung = b.rungs[b.promoted_from + 1]
            rung.add(tid)
            return Continue(tid, rung.budget, b.iteration)
        return None

    def next_action(self) -> Action:
        if not self.brackets and self._may_open():
            self._open_bracket()
        for b in self.active:
            action = self._action_in(b)
            if action is not None:
                return action
        active = self.active
        if not active or self.overlap_brackets:
            newest = self.brackets[-1] if self.brackets else None
            base_issued = newest is None or newest.rungs[0].full
            if self._may_open() and base_issued:
                return self._action_in(self._open_bracket())
        if active:
            return Wait()
        return Done()

    def record_result(self, trial_id: int, budget: float, loss: float | None) -> None:
        """Resolve a pending entry; ``loss=None`` (or non-finite) marks it failed."""
        it = self._trial_bracket.get(trial_id)
        if it is None:
            raise SchedulerError(f"unknown trial {trial_id}")
        b = self.brackets[it]
        entry = b.find(trial_id, budget)
        if entry is None:
            raise SchedulerError(f"trial {trial_id} was not issued at budget {budget}")
        if entry.status != PENDING:
            raise SchedulerError(f"trial {trial_id} at budget {budget} already resolved")
        if loss is None or not math.isfinite(loss):
            entry.status, entry.loss = FAILED, None
        else:
            entry.status, entry.loss = SUCCESS, float(loss)
        self._advance(b)

    def _advance(self, b: Bracket) -> None:
        # promote out of every rung that just became complete
        while not b.queued:
            i = b.promoted_from + 1
            rung = b.rungs[i]
            if not (rung.filled and rung.resolved):
                return
            self.rungs_completed += 1
            if i == len(b.rungs) - 1:
                b.promoted_from = i
                return
            b.queued = promote(rung, self.ladder.eta, b.rungs[i + 1].capacity)
            b.rungs[i + 1].target = len(b.queued)
            b.promoted_from = i
            if not b.queued:
                # nothing survived (all failed): the bracket ends here
                b.stopped = True
                return

    def snapshot(self) -> dict:
        return {
            "ladder": self.ladder.to_dict(),
            "next_trial_id": self.next_trial_id,
            "rungs_completed": self.rungs_completed,
            "brackets": [
                {
                    "iteration": b.iteration,
                    "s": b.s,
                    "stopped": b.stopped,
                    "rungs": [
                        {"budget": r.budget, "capacity": r.capacity,
                         "entries": [[e.trial_id, e.status, e.loss] for e in r.entries]}
                        for r in b.rungs
                    ],
                }
                for b in self.brackets
            ],
        }


def next_action(state: SchedulerState) -> Action:
    return state.next_action()
