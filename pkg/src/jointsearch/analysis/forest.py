"""Random forest of axis-aligned regression trees over unit-space coordinates.

Numeric dimensions live in ``[0, 1]`` and split on thresholds (``x <= t``
goes left). Categorical dimensions hold choice indices and split on subsets
of choices; choices a node never saw are sent left so every tree partitions
the whole domain. Each tree can list its leaves as boxes, which is what the
variance decomposition in :mod:`jointsearch.analysis.fanova` integrates over.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 30
    bootstrap: bool = True
    sample_fraction: float = 1.0
    min_samples_leaf: int = 2
    max_depth: int | None = None
    max_features: float = 1.0
    seed: int = 0


@dataclass
class Leaf:
    value: float
    lo: np.ndarray  # numeric lower bounds (unused entries for categorical dims)
    hi: np.ndarray
    cats: dict[int, np.ndarray]  # dim -> boolean mask of allowed choices


@dataclass
class RegressionTree:
    cardinalities: np.ndarray
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left_set: list[np.ndarray | None] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def _new_node(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left_set.append(None)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.value) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.value)

    def goes_left(self, node: int, x: np.ndarray) -> np.ndarray:
        f = self.feature[node]
        if self.cardinalities[f] > 0:
            return self.left_set[node][x[:, f].astype(int)]
        return x[:, f] <= self.threshold[node]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(len(X))
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0:
                out[idx] = self.value[node]
                continue
            mask = self.goes_left(node, X[idx])
            stack.append((self.left[node], idx[mask]))
            stack.append((self.right[node], idx[~mask]))
        return out

    def leaves(self) -> list[Leaf]:
        d = len(self.cardinalities)
        root_cats = {j: np.ones(int(k), dtype=bool) for j, k in enumerate(self.cardinalities) if k > 0}
        out = []
        stack = [(0, np.zeros(d), np.ones(d), root_cats)]
        while stack:
            node, lo, hi, cats = stack.pop()
            f = self.feature[node]
            if f < 0:
                out.append(Leaf(self.value[node], lo, hi, cats))
                continue
            if self.cardinalities[f] > 0:
                ls = self.left_set[node]
                lc, rc = dict(cats), dict(cats)
                lc[f], rc[f] = cats[f] & ls, cats[f] & ~ls
                stack.append((self.right[node], lo, hi, rc))
                stack.append((self.left[node], lo, hi, lc))
            else:
                t = self.threshold[node]
                lhi, rlo = hi.copy(), lo.copy()
                lhi[f], rlo[f] = t, t
                stack.append((self.right[node], rlo, hi, cats))
                stack.append((self.left[node], lo, lhi, cats))
        return out

    def split_dims(self) -> set[int]:
        return {f for f in self.feature if f >= 0}


def _best_numeric_split(x: np.ndarray, y: np.ndarray, min_leaf: int):
    order = np.argsort(x, kind="mergesort")
    xs, ys = x[order], y[order]
    n = len(ys)
    csum, csq = np.cumsum(ys), np.cumsum(ys * ys)
    nl = np.arange(1, n)
    sl, ql = csum[:-1], csq[:-1]
    sr, qr = csum[-1] - sl, csq[-1] - ql
    sse = (ql - sl * sl / nl) + (qr - sr * sr / (n - nl))
    valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf)
    i = int(np.argmin(sse))
    return sse[i], 0.5 * (xs[i] + xs[i + 1])


def _best_categorical_split(x: np.ndarray, y: np.ndarray, k: int, min_leaf: int):
    cats = x.astype(int)
    present = np.unique(cats)
    if len(present) < 2:
        return None
    means = np.array([y[cats == c].mean() for c in present])
    ranked = present[np.lexsort((present, means))]
    best = None
    for m in range(1, len(ranked)):
        left_cats = ranked[:m]
        mask = np.isin(cats, left_cats)
        nl = int(mask.sum())
        if nl < min_leaf or len(y) - nl < min_leaf:
            continue
        yl, yr = y[mask], y[~mask]
        sse = ((yl - yl.mean()) ** 2).sum() + ((yr - yr.mean()) ** 2).sum()
        if best is None or sse < best[0]:
            ls = np.ones(k, dtype=bool)  # unseen choices go left
            ls[ranked[m:]] = False
            best = (sse, ls)
    return best


def fit_tree(X: np.ndarray, y: np.ndarray, cardinalities: np.ndarray, min_samples_leaf: int = 2,
             max_depth: int | None = None, max_features: float = 1.0,
             rng: np.random.Generator | None = None) -> RegressionTree:
    """Grow a CART regression tree to full depth (or ``max_depth``)."""
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    card = np.asarray(cardinalities, dtype=int)
    tree = RegressionTree(card)
    d = X.shape[1]
    n_feat = max(1, int(round(max_features * d)))
    root = tree._new_node(y.mean())
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if len(idx) < 2 * min_samples_leaf or np.ptp(yn) == 0:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        feats = np.arange(d)
        if n_feat < d and rng is not None:
            feats = np.sort(rng.choice(d, size=n_feat, replace=False))
        parent_sse = ((yn - yn.mean()) ** 2).sum()
        best = None
        for f in feats:
            xf = X[idx, f]
            if card[f] > 0:
                cand = _best_categorical_split(xf, yn, int(card[f]), min_samples_leaf)
            else:
                cand = _best_numeric_split(xf, yn, min_samples_leaf)
            if cand is not None and (best is None or cand[0] < best[1] - 1e-12 * max(parent_sse, 1)):
                best = (f, cand[0], cand[1])
        if best is None or not best[1] < parent_sse:
            continue
        f, _, rule = best
        tree.feature[node] = int(f)
        if card[f] > 0:
            tree.left_set[node] = rule
            mask = rule[X[idx, f].astype(int)]
        else:
            tree.threshold[node] = float(rule)
            mask = X[idx, f] <= rule
        li, ri = idx[mask], idx[~mask]
        tree.left[node] = tree._new_node(y[li].mean())
        tree.right[node] = tree._new_node(y[ri].mean())
        stack.append((tree.right[node], ri, depth + 1))
        stack.append((tree.left[node], li, depth + 1))
    return tree


@dataclass
class Forest:
    trees: list[RegressionTree]
    cardinalities: np.ndarray
    names: list[str] | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.mean([t.predict(X) for t in self.trees], axis=0)


def fit_forest(X: np.ndarray, y: np.ndarray, cardinalities, params: ForestParams | None = None,
               names: list[str] | None = None) -> Forest:
    params = params or ForestParams()
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    rng = np.random.default_rng(params.seed)
    n = len(y)
    m = max(1, int(round(params.sample_fraction * n)))
    trees = []
    for _ in range(params.n_trees):
        idx = rng.integers(n, size=m) if params.bootstrap else np.arange(n)
        trees.append(fit_tree(X[idx], y[idx], cardinalities, params.min_samples_leaf,
                              params.max_depth, params.max_features, rng))
    return Forest(trees, np.asarray(cardinalities, dtype=int), names)


class InsufficientData(ValueError):
    pass


MIN_OBSERVATIONS = 10


def fit_surrogate(history, budget: float, forest_params: ForestParams | None = None,
                  space=None) -> Forest:
    """Fit a forest to the successful observations at ``budget`` (unit-space inputs)."""
    space = space or history.space
    obs = history.successful(budget)
    if len(obs) < MIN_OBSERVATIONS:
        raise InsufficientData(
            f"need at least {MIN_OBSERVATIONS} successful observations at budget {budget}, got {len(obs)}")
    X = np.array([space.to_unit(o.config) for o in obs])
    y = np.array([o.loss for o in obs])
    return fit_forest(X, y, space.cardinalities, forest_params, space.names)
