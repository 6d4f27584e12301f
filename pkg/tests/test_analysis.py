from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from jointsearch.analysis import (ForestParams, InsufficientData, TreeDecomposition, budget_correlation_table,
                                  fanova_importance, fit_forest, fit_surrogate, fit_tree, marginal_curve,
                                  spearman)
from jointsearch.analysis.export import (correlations_csv, correlations_json, importance_csv,
                                         importance_json, marginal_csv, trajectory_csv)
from jointsearch.bench import correlation_benchmark, grid_history
from jointsearch.history import Observation, RunHistory, incumbent_trajectory
from jointsearch.scheduler import geometric_budgets
from jointsearch.space import CATEGORICAL, CONTINUOUS, ParameterSpec, make_space

SQUARE = make_space([ParameterSpec("x1", CONTINUOUS, 0.0, 1.0), ParameterSpec("x2", CONTINUOUS, 0.0, 1.0)])
LADDER = geometric_budgets(1, 27, 3)
EXACT = ForestParams(n_trees=1, bootstrap=False, min_samples_leaf=1)


# --- spearman ---------------------------------------------------------------

def test_spearman_examples():
    assert spearman([1, 2, 3], [1, 2, 3]) == 1.0
    assert spearman([1, 2, 3], [3, 2, 1]) == -1.0
    assert spearman([0.1, 0.4, 0.2, 0.9], [0.2, 0.3, 0.1, 0.5]) == pytest.approx(0.8, abs=1e-15)


def test_spearman_errors():
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2])
    with pytest.raises(ValueError):
        spearman([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        spearman([1, 1, 1], [1, 2, 3])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=3, max_size=30))
def test_spearman_matches_scipy_with_ties(pairs):
    xs, ys = map(list, zip(*pairs))
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    assert spearman(xs, ys) == pytest.approx(stats.spearmanr(xs, ys).statistic, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=20, unique=True), st.integers(0, 100))
def test_spearman_invariant_under_monotone_maps(xs, seed):
    x = np.asarray(xs, dtype=float)
    ys = np.random.default_rng(seed).permutation(len(xs)).astype(float)
    assert spearman(x ** 3 + 5 * x, np.exp(ys)) == pytest.approx(spearman(x, ys), abs=1e-12)


# --- correlation tables -----------------------------------------------------

def table_history(rows):
    """rows: trial -> {budget: loss}"""
    h = RunHistory(SQUARE, LADDER, 0)
    for tid, losses in enumerate(rows):
        for b, loss in losses.items():
            h.append(Observation(tid, {"x1": 0.1, "x2": 0.2}, b, loss, "success", b, 0.0, 1.0))
    return h


def test_identical_orderings_give_ones():
    h = table_history([{b: t * b for b in LADDER.budgets} for t in range(1, 8)])
    t = budget_correlation_table(h)
    assert all(e[0] == 1.0 and e[1] == 7 for e in t.entries.values())


def test_too_few_shared_is_absent():
    h = table_history([{1.0: 0.1, 3.0: 0.2}, {1.0: 0.3, 3.0: 0.1}, {1.0: 0.5}, {1.0: 0.2}])
    t = budget_correlation_table(h)
    assert t.get(1.0, 3.0) is None
    assert t.get(3.0, 1.0) is None
    assert t.rows()[0] == {"budget_a": 1.0, "budget_b": 3.0, "spearman": None, "n_shared": 2}


def test_pair_definition_symmetric():
    rng = np.random.default_rng(0)
    h = table_history([{b: float(rng.random()) for b in LADDER.budgets} for _ in range(30)])
    t = budget_correlation_table(h)
    assert t.coefficient(1.0, 27.0) == t.coefficient(27.0, 1.0)
    assert t.warning


def test_failed_and_pending_excluded():
    h = table_history([{1.0: float(i), 3.0: float(i)} for i in range(5)])
    h.append(Observation(99, {"x1": 0.1, "x2": 0.2}, 1.0, None, "failed", 1.0, 0.0, 1.0))
    h.append(Observation(99, {"x1": 0.1, "x2": 0.2}, 3.0))
    assert budget_correlation_table(h).get(1.0, 3.0) == (1.0, 5)


def adjacent_beat_extremes(seed: int) -> bool:
    bench = correlation_benchmark(27.0, seed)
    t = budget_correlation_table(grid_history(bench, LADDER, 100, seed))
    b = LADDER.budgets
    far = t.coefficient(b[0], b[-1])
    return all(t.coefficient(lo, hi) > far for lo, hi in zip(b, b[1:]))


def test_correlation_shrinks_with_budget_gap():
    assert sum(adjacent_beat_extremes(s) for s in range(20)) >= 18


# --- forest -----------------------------------------------------------------

def grid_points(n: int) -> np.ndarray:
    g = (np.arange(n) + 0.5) / n
    return np.array([(a, b) for a in g for b in g])


def step_history(target, n=8):
    h = RunHistory(SQUARE, LADDER, 0)
    for i, (a, b) in enumerate(grid_points(n)):
        h.append(Observation(i, {"x1": float(a), "x2": float(b)}, 27.0, float(target(a, b)),
                             "success", 27.0, 0.0, 1.0))
    return h


def test_exact_tree_reproduces_training_losses():
    h = step_history(lambda a, b: float(a > 0.5))
    f = fit_surrogate(h, 27.0, EXACT)
    X = np.array([SQUARE.to_unit(o.config) for o in h])
    assert np.array_equal(f.predict(X), [o.loss for o in h])


def test_constant_target_predicts_constant():
    h = step_history(lambda a, b: 0.7)
    f = fit_surrogate(h, 27.0)
    assert np.allclose(f.predict(np.random.default_rng(0).random((50, 2))), 0.7)
    rep = fanova_importance(f, SQUARE)
    assert rep.singles == {"x1": 0.0, "x2": 0.0}
    assert rep.pairs == {("x1", "x2"): 0.0}
    curve = marginal_curve(f, SQUARE, ["x1"], 5)
    assert np.allclose(curve.mean, 0.7)


def test_insufficient_data():
    h = step_history(lambda a, b: a, n=3)
    with pytest.raises(InsufficientData):
        fit_surrogate(h, 27.0)


def test_held_out_error_beats_mean():
    rng = np.random.default_rng(0)
    X = rng.random((250, 2))
    y = np.sin(3 * X[:, 0]) + (X[:, 1] - 0.5) ** 2
    train, test = slice(0, 200), slice(200, 250)
    f = fit_forest(X[train], y[train], np.array([0, 0]), ForestParams(seed=1))
    mse = np.mean((f.predict(X[test]) - y[test]) ** 2)
    baseline = np.mean((y[train].mean() - y[test]) ** 2)
    assert mse < 0.2 * baseline


def test_categorical_subset_splits_and_unseen_choices():
    X = np.array([[c, u] for c in (0, 1, 3) for u in (0.2, 0.8)] * 2, dtype=float)
    y = np.where(np.isin(X[:, 0], [1]), 5.0, 1.0)
    tree = fit_tree(X, y, np.array([4, 0]), min_samples_leaf=1)
    assert tree.feature[0] == 0
    assert np.array_equal(tree.predict(X), y)
    # choice 2 never appeared; it goes down the left branch
    left_value = tree.value[tree.left[0]]
    assert tree.predict(np.array([[2.0, 0.5]]))[0] == left_value


# --- fANOVA -----------------------------------------------------------------

def test_fanova_single_step():
    f = fit_surrogate(step_history(lambda a, b: float(a > 0.5)), 27.0, EXACT)
    rep = fanova_importance(f, SQUARE)
    assert rep.total_variance == pytest.approx(0.25, abs=1e-12)
    assert rep.singles["x1"] == pytest.approx(1.0, abs=1e-9)
    assert rep.singles["x2"] == pytest.approx(0.0, abs=1e-9)
    assert rep.pairs[("x1", "x2")] == pytest.approx(0.0, abs=1e-9)


def test_fanova_additive():
    f = fit_surrogate(step_history(lambda a, b: float(a > 0.5) + float(b > 0.5)), 27.0, EXACT)
    rep = fanova_importance(f, SQUARE)
    assert rep.singles["x1"] == pytest.approx(0.5, abs=1e-9)
    assert rep.singles["x2"] == pytest.approx(0.5, abs=1e-9)
    assert rep.pairs[("x1", "x2")] == pytest.approx(0.0, abs=1e-9)
    assert sum(rep.singles.values()) + sum(rep.pairs.values()) == pytest.approx(1.0, abs=1e-9)


def test_fanova_product_splits_in_thirds():
    # 1[a>.5]*1[b>.5]: total variance 3/16, each main effect 1/16, interaction the rest
    f = fit_surrogate(step_history(lambda a, b: float(a > 0.5 and b > 0.5)), 27.0, EXACT)
    rep = fanova_importance(f, SQUARE)
    assert rep.total_variance == pytest.approx(3 / 16, abs=1e-12)
    for v in (rep.singles["x1"], rep.singles["x2"], rep.pairs[("x1", "x2")]):
        assert v == pytest.approx(1 / 3, abs=1e-9)


def test_fractions_bounded_for_random_forests():
    rng = np.random.default_rng(3)
    space = make_space([ParameterSpec("a", CONTINUOUS, 0.0, 1.0), ParameterSpec("b", CONTINUOUS, 0.0, 1.0),
                        ParameterSpec("c", CATEGORICAL, choices=("p", "q", "r"))])
    X = np.column_stack([rng.random(80), rng.random(80), rng.integers(0, 3, 80)])
    y = X[:, 0] * (X[:, 2] == 1) + 0.3 * X[:, 1] + 0.05 * rng.standard_normal(80)
    rep = fanova_importance(fit_forest(X, y, space.cardinalities), space)
    fr = list(rep.singles.values()) + list(rep.pairs.values())
    assert all(0.0 <= v <= 1.0 for v in fr)
    assert sum(fr) <= 1.0 + 1e-9
    # main effect of c has variance 1/18, the a-c interaction 1/54, a alone 1/108
    assert [k for k, _ in rep.ranked()[:3]] == ["c", "a x c", "a"]


def brute_marginal(tree, dim: int, at: np.ndarray, n: int = 512) -> np.ndarray:
    g = (np.arange(n) + 0.5) / n
    out = []
    for a in at:
        pts = np.empty((n, 2))
        pts[:, dim] = a
        pts[:, 1 - dim] = g
        out.append(tree.predict(pts).mean())
    return np.array(out)


def test_marginals_match_numeric_integration():
    rng = np.random.default_rng(0)
    q = (np.arange(512) + 0.5) / 512
    for _ in range(100):
        n = int(rng.integers(10, 60))
        X = rng.integers(0, 65, size=(n, 2)) / 64
        y = rng.normal(size=n)
        tree = fit_tree(X, y, np.array([0, 0]), min_samples_leaf=int(rng.integers(1, 4)))
        dec = TreeDecomposition(tree)
        for dim in (0, 1):
            exact = dec.marginal_at((dim,), q[:, None])
            assert np.max(np.abs(exact - brute_marginal(tree, dim, q))) < 1e-6


def test_marginal_curve_values_and_shapes():
    h = step_history(lambda a, b: float(a > 0.5))
    f = fit_surrogate(h, 27.0, EXACT)
    curve = marginal_curve(f, SQUARE, ["x1"], 2, best_config={"x1": 0.1, "x2": 0.9})
    assert np.allclose(curve.mean, [0.0, 1.0])
    assert curve.grid_values == [[0.25, 0.75]]
    assert curve.best == {"x1": 0.1}
    pair = marginal_curve(f, SQUARE, ["x1", "x2"], 7)
    assert pair.mean.shape == (7, 7)
    with pytest.raises(ValueError):
        marginal_curve(f, SQUARE, [], 7)


def test_categorical_marginal_grid():
    space = make_space([ParameterSpec("c", CATEGORICAL, choices=("p", "q", "r")),
                        ParameterSpec("u", CONTINUOUS, 0.0, 1.0)])
    X = np.array([[c, u] for c in range(3) for u in np.linspace(0.05, 0.95, 6)])
    y = X[:, 0] * 1.0
    f = fit_forest(X, y, space.cardinalities, EXACT)
    curve = marginal_curve(f, space, ["c"], 20)
    assert curve.grid_values == [["p", "q", "r"]]
    assert np.allclose(curve.mean, [0.0, 1.0, 2.0])


# --- export -----------------------------------------------------------------

def test_exports_have_documented_columns():
    h = step_history(lambda a, b: float(a > 0.5) + b)
    f = fit_surrogate(h, 27.0, ForestParams(n_trees=3))
    rep = fanova_importance(f, SQUARE, budget=27.0)
    rows = list(csv.DictReader(io.StringIO(importance_csv(rep))))
    assert list(rows[0]) == ["budget", "parameters", "order", "fraction", "std"]
    assert {r["parameters"] for r in rows} == {"x1", "x2", "x1|x2"}
    doc = json.loads(importance_json(rep))
    assert set(doc) == {"budget", "total_variance", "singles", "pairs", "warning"}
    curve = marginal_curve(f, SQUARE, ["x1", "x2"], 3)
    assert marginal_csv(curve).splitlines()[0] == "param_a,value_a,unit_a,param_b,value_b,unit_b,mean"
    assert len(marginal_csv(curve).splitlines()) == 10
    table = budget_correlation_table(h)
    assert correlations_csv(table).splitlines()[0] == "budget_a,budget_b,spearman,n_shared"
    assert json.loads(correlations_json(table))["warning"]
    assert trajectory_csv(incumbent_trajectory(h)).splitlines()[0] == "time,trial_id,budget,loss"
