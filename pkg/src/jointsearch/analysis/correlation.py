"""Rank correlation of losses between budgets."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

SELECTION_BIAS_WARNING = (
    "observations were selected by the optimizer: configurations evaluated on larger "
    "budgets are skewed towards ones that did well on smaller budgets"
)
MIN_SHARED = 3


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    return rankdata(np.asarray(x, dtype=float), method="average")


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError(f"inputs must be equal-length 1-D sequences, got {xs.shape} and {ys.shape}")
    if len(xs) < 3:
        raise ValueError("need at least 3 pairs")
    rx, ry = average_ranks(xs), average_ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.dot(rx, rx) * np.dot(ry, ry))
    if denom == 0:
        raise ValueError("all values tied in at least one input")
    return float(np.clip(np.dot(rx, ry) / denom, -1.0, 1.0))


@dataclass
class CorrelationTable:
    budgets: list[float]
    # (b_low, b_high) -> (coefficient, n_shared) or None
    entries: dict[tuple[float, float], tuple[float, int] | None]
    warning: str = field(default=SELECTION_BIAS_WARNING)

    def get(self, b1: float, b2: float) -> tuple[float, int] | None:
        return self.entries[(min(b1, b2), max(b1, b2))]

    def coefficient(self, b1: float, b2: float) -> float | None:
        e = self.get(b1, b2)
        return None if e is None else e[0]

    def rows(self) -> list[dict]:
        return [
            {"budget_a": a, "budget_b": b,
             "spearman": None if e is None else e[0],
             "n_shared": self._shared[(a, b)] if e is None else e[1]}
            for (a, b), e in self.entries.items()
        ]

    _shared: dict = field(default_factory=dict, repr=False)


def _losses_by_budget(history) -> dict[float, dict[int, float]]:
    by_budget: dict[float, dict[int, float]] = {}
    for o in history.observations:
        if o.status == "success":
            by_budget.setdefault(o.budget, {})[o.trial_id] = o.loss
    return by_budget


def pair_correlation(history, b1: float, b2: float) -> tuple[float, int] | None:
    by_budget = _losses_by_budget(history)
    l1, l2 = by_budget.get(b1, {}), by_budget.get(b2, {})
    shared = sorted(set(l1) & set(l2))
    if len(shared) < MIN_SHARED:
        return None
    try:
        return spearman([l1[t] for t in shared], [l2[t] for t in shared]), len(shared)
    except ValueError:
        return None


def budget_correlation_table(history, budgets=None) -> CorrelationTable:
    """Spearman coefficient for every budget pair over the trials evaluated at both."""
    by_budget = _losses_by_budget(history)
    if budgets is None:
        budgets = sorted(set(history.ladder.budgets) | set(by_budget))
    entries, shared_counts = {}, {}
    for a, b in itertools.combinations(sorted(budgets), 2):
        la, lb = by_budget.get(a, {}), by_budget.get(b, {})
        shared = sorted(set(la) & set(lb))
        shared_counts[(a, b)] = len(shared)
        entry = None
        if len(shared) >= MIN_SHARED:
            try:
                entry = (spearman([la[t] for t in shared], [lb[t] for t in shared]), len(shared))
            except ValueError:
                entry = None
        entries[(a, b)] = entry
    return CorrelationTable(sorted(budgets), entries, _shared=shared_counts)
