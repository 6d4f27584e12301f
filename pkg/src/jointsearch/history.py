"""Run history: observations, the NDJSON history file, incumbents.

History file layout (UTF-8, one JSON object per line):

* line 1 -- ``{"record": "header", "format": "jointsearch-history/1",
  "space": {...}, "ladder": {"budgets": [...], "eta": ...}, "seed": ...,
  "sampler": {...}, "meta": {...}}``
* then one ``{"record": "observation", ...}`` line per state change of an
  observation, with the keys of :data:`OBSERVATION_FIELDS`.

An observation is first written as ``pending`` when it is submitted and again
when it resolves; readers keep the last record per ``(trial_id, budget)`` at
the position of the first one. The file is only ever appended to.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterator

from .sampler import SamplerParams
from .scheduler import BudgetLadder
from .space import Configuration, SearchSpace

FORMAT = "jointsearch-history/1"

SUCCESS = "success"
FAILED = "failed"
PENDING = "pending"
STATUSES = (SUCCESS, FAILED, PENDING)

OBSERVATION_FIELDS = (
    "trial_id",
    "config",
    "budget",
    "loss",
    "status",
    "consumed_budget",
    "submitted_at",
    "finished_at",
    "info",
)


class HistoryError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    trial_id: int
    config: Configuration
    budget: float
    loss: float | None = None
    status: str = PENDING
    consumed_budget: float | None = None
    submitted_at: float = 0.0
    finished_at: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise HistoryError(f"unknown status {self.status!r}")
        if self.status == SUCCESS and (self.loss is None or not math.isfinite(self.loss)):
            raise HistoryError(f"trial {self.trial_id}: success needs a finite loss")
        if self.status == FAILED and self.loss is not None:
            raise HistoryError(f"trial {self.trial_id}: failed observations carry no loss")
        if self.finished_at is not None and self.finished_at < self.submitted_at:
            raise HistoryError(f"trial {self.trial_id}: finished before it was submitted")

    @property
    def key(self) -> tuple[int, float]:
        return self.trial_id, self.budget

    @property
    def cost(self) -> float:
        """Budget charged for this observation (zero while pending)."""
        if self.status == PENDING:
            return 0.0
        return self.budget if self.consumed_budget is None else self.consumed_budget

    def to_record(self) -> dict:
        rec = {"record": "observation"}
        for name in OBSERVATION_FIELDS:
            rec[name] = getattr(self, name)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Observation":
        missing = [k for k in OBSERVATION_FIELDS if k not in rec]
        if missing:
            raise HistoryError(f"observation record lacks {missing}")
        info = rec["info"]
        if not isinstance(info, dict) or not all(isinstance(v, str) for v in info.values()):
            raise HistoryError("observation info must map keys to strings")
        return cls(**{k: rec[k] for k in OBSERVATION_FIELDS})


class RunHistory:
    """Ordered store of observations for one run."""

    def __init__(self, space: SearchSpace, ladder: BudgetLadder, seed: int | None = None,
                 sampler: SamplerParams | None = None, meta: dict | None = None) -> None:
        self.space = space
        self.ladder = ladder
        self.seed = seed
        self.sampler = sampler or SamplerParams()
        self.meta = dict(meta or {})
        self.observations: list[Observation] = []
        self._pos: dict[tuple[int, float], int] = {}

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self) -> Iterator[Observation]:
        return iter(self.observations)

    def get(self, trial_id: int, budget: float) -> Observation | None:
        i = self._pos.get((trial_id, budget))
        return None if i is None else self.observations[i]

    def append(self, obs: Observation) -> Observation:
        if obs.key in self._pos:
            raise HistoryError(f"duplicate observation for trial {obs.trial_id} at budget {obs.budget}")
        self._pos[obs.key] = len(self.observations)
        self.observations.append(obs)
        return obs

    def resolve(self, trial_id: int, budget: float, **changes: Any) -> Observation:
        """Replace a pending observation with its resolved form."""
        i = self._pos.get((trial_id, budget))
        if i is None:
            raise HistoryError(f"no observation for trial {trial_id} at budget {budget}")
        old = self.observations[i]
        if old.status != PENDING:
            raise HistoryError(f"trial {trial_id} at budget {budget} is already resolved")
        new = replace(old, **changes)
        self.observations[i] = new
        return new

    def successful(self, budget: float | None = None) -> list[Observation]:
        return [o for o in self.observations
                if o.status == SUCCESS and (budget is None or o.budget == budget)]

    def budgets(self) -> list[float]:
        return sorted({o.budget for o in self.observations})

    def snapshot(self) -> "RunHistory":
        """Independent copy, safe to hand to analysis code."""
        return copy.deepcopy(self)

    def header(self) -> dict:
        return {
            "record": "header",
            "format": FORMAT,
            "space": self.space.to_dict(),
            "ladder": self.ladder.to_dict(),
            "seed": self.seed,
            "sampler": self.sampler.to_dict(),
            "meta": self.meta,
        }


# --- serialization -----------------------------------------------------------

def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=False, separators=(",", ":"), allow_nan=False)


class HistoryWriter:
    """Append-only line writer; flushes after every record."""

    def __init__(self, path: str, history: RunHistory) -> None:
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="\n")
        self._write(history.header())

    def _write(self, rec: dict) -> None:
        self._fh.write(dumps_record(rec) + "\n")
        self._fh.flush()

    def write(self, obs: Observation) -> None:
        self._write(obs.to_record())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "HistoryWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_history(history: RunHistory, path: str) -> None:
    with HistoryWriter(path, history) as w:
        for obs in history.observations:
            w.write(obs)


def parse_history(lines, abandon_pending: bool = True) -> RunHistory:
    """Rebuild a history from file lines.

    Pending observations left behind by an interrupted run are kept as
    pending with ``info["abandoned"] = "true"`` when ``abandon_pending``.
    """
    it = (ln for ln in lines if ln.strip())
    try:
        head = json.loads(next(it))
    except StopIteration:
        raise HistoryError("empty history file") from None
    except json.JSONDecodeError as exc:
        raise HistoryError(f"malformed header: {exc}") from exc
    if head.get("record") != "header" or head.get("format") != FORMAT:
        raise HistoryError("first line is not a history header")
    hist = RunHistory(
        SearchSpace.from_dict(head["space"]),
        BudgetLadder.from_dict(head["ladder"]),
        head.get("seed"),
        SamplerParams.from_dict(head.get("sampler", {})),
        head.get("meta", {}),
    )
    for lineno, line in enumerate(it, start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise HistoryError(f"line {lineno}: {exc}") from exc
        if rec.get("record") != "observation":
            raise HistoryError(f"line {lineno}: unexpected record {rec.get('record')!r}")
        obs = Observation.from_record(rec)
        i = hist._pos.get(obs.key)
        if i is None:
            hist.append(obs)
        else:
            hist.observations[i] = obs
    if abandon_pending:
        for i, o in enumerate(hist.observations):
            if o.status == PENDING:
                hist.observations[i] = replace(o, info={**o.info, "abandoned": "true"})
    return hist


def read_history(path: str, abandon_pending: bool = True) -> RunHistory:
    with open(path, encoding="utf-8") as fh:
        return parse_history(fh, abandon_pending)


# --- incumbents and accounting -----------------------------------------------

@dataclass(frozen=True)
class TrajectoryPoint:
    time: float
    trial_id: int
    budget: float
    loss: float


def incumbent_at(history: RunHistory, t: float) -> tuple[Configuration, float] | None:
    """Best configuration among results finished by ``t`` at the largest budget reached.

    Lower-budget results never beat a result at a larger budget. Ties go to
    the earlier finish.
    """
    done = [o for o in history.successful() if o.finished_at is not None and o.finished_at <= t]
    if not done:
        return None
    top = max(o.budget for o in done)
    best = min((o for o in done if o.budget == top), key=lambda o: (o.loss, o.finished_at))
    return best.config, best.loss


def incumbent_trajectory(history: RunHistory, budget: float | None = None) -> list[TrajectoryPoint]:
    """Best-so-far loss over time at one budget (the ladder's largest by default).

    Losses along the trajectory are non-increasing.
    """
    if budget is None:
        budget = history.ladder.b_max
    obs = sorted(
        (o for o in history.successful(budget) if o.finished_at is not None),
        key=lambda o: o.finished_at,
    )
    points: list[TrajectoryPoint] = []
    for o in obs:
        if not points or o.loss < points[-1].loss:
            points.append(TrajectoryPoint(o.finished_at, o.trial_id, o.budget, o.loss))
    return points


def full_budget_equivalents(history: RunHistory, b_max: float | None = None) -> float:
    """Total budget consumed by resolved observations, in units of ``b_max``."""
    if b_max is None:
        b_max = history.ladder.b_max
    if not b_max > 0:
        raise ValueError("b_max must be positive")
    return math.fsum(o.cost for o in history.observations) / b_max
