"""Functional ANOVA over tree ensembles.

For every tree the prediction is piecewise constant on leaf boxes, so the
marginal of any subset of dimensions (averaging the tree over all other
dimensions under the uniform measure) is exact and piecewise constant on the
grid formed by the tree's cut points. Variance contributions follow the
usual inclusion-exclusion: the contribution of a pair is the variance of its
joint marginal minus the contributions of its two members.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .correlation import SELECTION_BIAS_WARNING
from .forest import Forest, RegressionTree


class TreeDecomposition:
    """Leaf boxes of one tree as dense arrays."""

    def __init__(self, tree: RegressionTree) -> None:
        self.card = np.asarray(tree.cardinalities, dtype=int)
        leaves = tree.leaves()
        self.values = np.array([lf.value for lf in leaves])
        self.lo = np.array([lf.lo for lf in leaves])
        self.hi = np.array([lf.hi for lf in leaves])
        self.cats = {j: np.array([lf.cats[j] for lf in leaves]) for j in np.flatnonzero(self.card > 0)}
        d = len(self.card)
        widths = np.empty((len(leaves), d))
        for j in range(d):
            if self.card[j] > 0:
                widths[:, j] = self.cats[j].sum(axis=1) / self.card[j]
            else:
                widths[:, j] = self.hi[:, j] - self.lo[:, j]
        self.widths = widths
        self.volume = widths.prod(axis=1)
        self.mean = float(np.dot(self.volume, self.values))
        self.variance = float(np.dot(self.volume, (self.values - self.mean) ** 2))
        self.split_dims = tree.split_dims()

    def cells(self, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell representatives, cell weights and leaf-covers-cell indicators for dim ``j``."""
        if self.card[j] > 0:
            k = self.card[j]
            return np.arange(k, dtype=float), np.full(k, 1.0 / k), self.cats[j].astype(float)
        cuts = np.unique(np.concatenate([[0.0, 1.0], self.lo[:, j], self.hi[:, j]]))
        a, b = cuts[:-1], cuts[1:]
        ind = (self.lo[:, j, None] <= a[None]) & (b[None] <= self.hi[:, j, None])
        return 0.5 * (a + b), b - a, ind.astype(float)

    def _rest(self, dims: tuple[int, ...]) -> np.ndarray:
        keep = np.ones(len(self.card), dtype=bool)
        keep[list(dims)] = False
        return self.values * self.widths[:, keep].prod(axis=1)

    def marginal_table(self, dims: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        """Marginal values on the cell grid of ``dims`` and the matching cell weights."""
        weighted = self._rest(dims)
        parts = [self.cells(j) for j in dims]
        if len(dims) == 1:
            (_, w, ind), = parts
            return weighted @ ind, w
        (_, w1, i1), (_, w2, i2) = parts
        return np.einsum("l,la,lb->ab", weighted, i1, i2), np.outer(w1, w2)

    def marginal_variance(self, dims: tuple[int, ...]) -> float:
        if not set(dims) & self.split_dims:
            return 0.0
        table, w = self.marginal_table(dims)
        return float(np.sum(w * (table - self.mean) ** 2))

    def marginal_at(self, dims: tuple[int, ...], points: np.ndarray) -> np.ndarray:
        """Marginal of ``dims`` evaluated at ``points`` of shape ``(m, len(dims))``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        weighted = self._rest(dims)
        inside = np.ones((len(points), len(self.values)), dtype=bool)
        for col, j in enumerate(dims):
            x = points[:, col]
            if self.card[j] > 0:
                inside &= self.cats[j][:, x.astype(int)].T
            else:
                lo, hi = self.lo[:, j], self.hi[:, j]
                # leaf boxes are (lo, hi] except at the lower domain edge
                inside &= ((x[:, None] > lo[None]) | (lo[None] <= 0.0)) & (x[:, None] <= hi[None])
        return inside.astype(float) @ weighted


def tree_contributions(dec: TreeDecomposition, max_order: int = 2):
    d = len(dec.card)
    singles = {(i,): dec.marginal_variance((i,)) for i in range(d)}
    pairs = {}
    if max_order >= 2:
        for i, j in itertools.combinations(range(d), 2):
            if {i, j} <= dec.split_dims:
                v = dec.marginal_variance((i, j)) - singles[(i,)] - singles[(j,)]
                pairs[(i, j)] = max(v, 0.0)
            else:
                pairs[(i, j)] = 0.0
    return singles, pairs


@dataclass
class ImportanceReport:
    budget: float | None
    total_variance: float
    singles: dict[str, float]
    pairs: dict[tuple[str, str], float]
    singles_std: dict[str, float] = field(default_factory=dict)
    pairs_std: dict[tuple[str, str], float] = field(default_factory=dict)
    warning: str = SELECTION_BIAS_WARNING

    def ranked(self) -> list[tuple[str, float]]:
        items = [(k, v) for k, v in self.singles.items()]
        items += [(f"{a} x {b}", v) for (a, b), v in self.pairs.items()]
        return sorted(items, key=lambda kv: -kv[1])


def fanova_importance(surrogate: Forest, space=None, max_order: int = 2,
                      budget: float | None = None) -> ImportanceReport:
    """Variance fractions of single parameters and pairs, averaged over trees.

    A tree with zero total variance contributes fraction 0 everywhere.
    """
    if max_order not in (1, 2):
        raise ValueError("max_order must be 1 or 2")
    names = list(space.names) if space is not None else (
        surrogate.names or [f"x{i}" for i in range(len(surrogate.cardinalities))])
    d = len(names)
    single_frac = np.zeros((len(surrogate.trees), d))
    pair_keys = list(itertools.combinations(range(d), 2)) if max_order >= 2 else []
    pair_frac = np.zeros((len(surrogate.trees), len(pair_keys)))
    variances = []
    for t, tree in enumerate(surrogate.trees):
        dec = TreeDecomposition(tree)
        variances.append(dec.variance)
        if dec.variance <= 0:
            continue
        singles, pairs = tree_contributions(dec, max_order)
        single_frac[t] = [singles[(i,)] / dec.variance for i in range(d)]
        pair_frac[t] = [pairs[k] / dec.variance for k in pair_keys]
    return ImportanceReport(
        budget,
        float(np.mean(variances)),
        {names[i]: float(single_frac[:, i].mean()) for i in range(d)},
        {(names[i], names[j]): float(pair_frac[:, p].mean()) for p, (i, j) in enumerate(pair_keys)},
        {names[i]: float(single_frac[:, i].std()) for i in range(d)},
        {(names[i], names[j]): float(pair_frac[:, p].std()) for p, (i, j) in enumerate(pair_keys)},
    )


@dataclass
class MarginalCurve:
    params: tuple[str, ...]
    grid_unit: list[np.ndarray]
    grid_values: list[list]
    mean: np.ndarray  # (g,) or (g1, g2)
    best: dict | None = None


def _grid(spec, grid_size: int) -> np.ndarray:
    if spec is not None and spec.is_categorical:
        return np.arange(spec.n_choices, dtype=float)
    return (np.arange(grid_size) + 0.5) / grid_size


def marginal_curve(surrogate: Forest, space, params, grid_size: int = 20,
                   best_config: dict | None = None) -> MarginalCurve:
    """Predicted marginal loss over a grid for one parameter or a pair.

    Numeric grids are cell midpoints in unit space; categorical grids list
    every choice. Axis values are reported in original units.
    """
    params = tuple(params)
    if not 1 <= len(params) <= 2:
        raise ValueError("marginal curves take one or two parameters")
    dims = tuple(space.index(p) for p in params)
    specs = [space[j] for j in dims]
    grids = [_grid(s, grid_size) for s in specs]
    mesh = np.stack([g.ravel() for g in np.meshgrid(*grids, indexing="ij")], axis=1)
    decs = [TreeDecomposition(t) for t in surrogate.trees]
    vals = np.mean([dec.marginal_at(dims, mesh) for dec in decs], axis=0)
    mean = vals.reshape([len(g) for g in grids])
    grid_values = [[s.from_unit(float(u)) for u in g] for s, g in zip(specs, grids)]
    best = {p: best_config[p] for p in params} if best_config else None
    return MarginalCurve(params, grids, grid_values, mean, best)
