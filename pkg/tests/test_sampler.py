from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from jointsearch.history import Observation, RunHistory
from jointsearch.sampler import (KdeModel, KernelSet, SamplerParams, fit_and_propose, fit_models,
                                 kde_density, normal_reference_bandwidth, propose, propose_unit,
                                 select_model_budget, split_sizes)
from jointsearch.scheduler import geometric_budgets
from jointsearch.space import CATEGORICAL, CONTINUOUS, INTEGER, ParameterSpec, make_space

MIXED = make_space([
    ParameterSpec("a", CONTINUOUS, 0.0, 1.0),
    ParameterSpec("b", INTEGER, 1, 16, log=True),
    ParameterSpec("c", CATEGORICAL, choices=("p", "q", "r")),
])
UNIT1 = make_space([ParameterSpec("x", CONTINUOUS, 0.0, 1.0)])
LADDER = geometric_budgets(400, 10800, 3)


def make_history(space, configs, losses, budget=400.0):
    h = RunHistory(space, LADDER, 0)
    for i, (c, loss) in enumerate(zip(configs, losses)):
        h.append(Observation(i, c, budget, float(loss), "success", budget, 0.0, 1.0))
    return h


def random_history(space, n, seed=0, budget=400.0, loss=None):
    rng = np.random.default_rng(seed)
    configs = [space.sample_uniform(rng) for _ in range(n)]
    losses = [loss(c) if loss else rng.random() for c in configs]
    return make_history(space, configs, losses, budget)


# --- split ------------------------------------------------------------------

def test_split_threshold_and_sizes():
    assert split_sizes(5, 4, 0.15) is None
    assert split_sizes(20, 4, 0.15) == (4, 16)
    assert split_sizes(100, 4, 0.15) == (15, 85)


def test_identical_losses_split_by_submission_order():
    space = make_space([ParameterSpec(f"x{i}", CONTINUOUS, 0.0, 1.0) for i in range(3)])
    h = random_history(space, 20, loss=lambda c: 1.0)
    m = fit_models(h, space, 400.0, SamplerParams())
    assert m.good_ids == (0, 1, 2, 3)
    assert m.bad_ids == tuple(range(4, 20))


def test_absent_when_too_few():
    space = make_space([ParameterSpec(f"x{i}", CONTINUOUS, 0.0, 1.0) for i in range(3)])
    assert fit_models(random_history(space, 5), space, 400.0, SamplerParams()) is None
    assert fit_models(random_history(space, 8), space, 400.0, SamplerParams()) is not None


def test_select_model_budget():
    params = SamplerParams()
    assert select_model_budget(RunHistory(UNIT1, LADDER), UNIT1, params) is None
    h = random_history(UNIT1, 6, budget=400.0)
    assert select_model_budget(h, UNIT1, params) == 400.0
    for i, o in enumerate(random_history(UNIT1, 6, seed=1, budget=1200.0)):
        h.append(Observation(100 + i, o.config, 1200.0, o.loss, "success", 1200.0, 0.0, 1.0))
    assert select_model_budget(h, UNIT1, params) == 1200.0


# --- densities --------------------------------------------------------------

def test_peak_value_against_quadrature():
    ks = KernelSet(np.array([[0.5]]), np.array([0.1]), np.array([0]))
    mass, _ = integrate.quad(lambda x: stats.norm.pdf(x, 0.5, 0.1), 0, 1)
    peak = stats.norm.pdf(0.5, 0.5, 0.1) / mass
    assert kde_density(ks, np.array([0.5])) == pytest.approx(peak, rel=1e-12)
    total, _ = integrate.quad(lambda x: kde_density(ks, np.array([x])), 0, 1)
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("center,h", [(0.0, 0.3), (0.97, 0.05), (0.4, 2.0), (0.2, 1e-3)])
def test_truncated_kernel_integrates_to_one(center, h):
    ks = KernelSet(np.array([[center]]), np.array([h]), np.array([0]))
    total, _ = integrate.quad(lambda x: kde_density(ks, np.array([x])), 0, 1,
                              points=[center], limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_categorical_kernel_value():
    ks = KernelSet(np.array([[0.0]]), np.array([0.2]), np.array([3]))
    assert kde_density(ks, np.array([0.0])) == pytest.approx(0.8)
    assert kde_density(ks, np.array([2.0])) == pytest.approx(0.1)


def mc_integral(ks: KernelSet, space, n=100_000, seed=0):
    """Monte Carlo integral over unit numeric dims, summed over categorical choices."""
    rng = np.random.default_rng(seed)
    card = space.cardinalities
    u = rng.random((n, space.dimension))
    weight = 1.0
    for j in np.flatnonzero(card > 0):
        u[:, j] = rng.integers(card[j], size=n)
        weight *= card[j]
    return weight * ks.density(u).mean()


@pytest.mark.parametrize("seed", range(4))
def test_fitted_densities_integrate_to_one(seed):
    h = random_history(MIXED, 40, seed=seed)
    m = fit_models(h, MIXED, 400.0, SamplerParams())
    for side in (m.good, m.bad):
        assert mc_integral(side, MIXED, seed=seed) == pytest.approx(1.0, abs=0.02)


def test_bandwidth_rule_and_floor():
    x = np.array([[0.1], [0.2], [0.4], [0.7]])
    expected = 1.06 * np.std(x[:, 0], ddof=1) * 4 ** -0.2
    assert normal_reference_bandwidth(x)[0] == pytest.approx(expected)
    params = SamplerParams()
    h = make_history(UNIT1, [{"x": 0.5}] * 10, range(10))
    m = fit_models(h, UNIT1, 400.0, params)
    assert m.good.bandwidths[0] == params.min_bandwidth


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(8, 40))
def test_bandwidths_never_below_floor(seed, n):
    params = SamplerParams()
    m = fit_models(random_history(MIXED, n, seed=seed), MIXED, 400.0, params)
    assert m is not None
    for side in (m.good, m.bad):
        assert np.all(side.bandwidths >= params.min_bandwidth)
        assert len(side.points) >= params.n_min(MIXED)


# --- invariance and proposals ----------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-1e3, 1e3), st.integers(0, 1000))
def test_affine_loss_rescaling_is_invisible(a, b, seed):
    base = random_history(MIXED, 30, seed=seed)
    scaled = make_history(MIXED, [o.config for o in base], [a * o.loss + b for o in base])
    params = SamplerParams()
    m1 = fit_models(base, MIXED, 400.0, params)
    m2 = fit_models(scaled, MIXED, 400.0, params)
    assert m1.good_ids == m2.good_ids and m1.bad_ids == m2.bad_ids
    for s1, s2 in ((m1.good, m2.good), (m1.bad, m2.bad)):
        assert np.array_equal(s1.points, s2.points) and np.array_equal(s1.bandwidths, s2.bandwidths)
    p1 = [fit_and_propose(base, MIXED, params, np.random.default_rng(i))[0] for i in range(5)]
    p2 = [fit_and_propose(scaled, MIXED, params, np.random.default_rng(i))[0] for i in range(5)]
    assert p1 == p2


def clustered_model():
    rng = np.random.default_rng(0)
    good = np.clip(0.2 + 0.03 * rng.standard_normal((6, 1)), 0, 1)
    bad = np.clip(0.8 + 0.03 * rng.standard_normal((20, 1)), 0, 1)
    params = SamplerParams()
    bw = lambda pts: np.maximum(normal_reference_bandwidth(pts) * params.bandwidth_factor,
                                params.min_bandwidth)
    card = np.array([0])
    return KdeModel(400.0, KernelSet(good, bw(good), card), KernelSet(bad, bw(bad), card))


def test_proposal_follows_good_cluster():
    model = clustered_model()
    params = SamplerParams(random_fraction=0.0)
    # grid oracle: the ratio is maximal near the good cluster
    grid = np.linspace(0, 1, 1001)[:, None]
    assert abs(grid[np.argmax(model.log_ratio(grid)), 0] - 0.2) < abs(grid[np.argmax(model.log_ratio(grid)), 0] - 0.8)
    hits = 0
    for seed in range(100):
        x = propose(model, UNIT1, params, np.random.default_rng(seed))["x"]
        hits += abs(x - 0.2) < abs(x - 0.8)
    assert hits >= 95


def test_absent_model_gives_uniform():
    rng = np.random.default_rng(0)
    xs = [propose(None, UNIT1, SamplerParams(), rng)["x"] for _ in range(10_000)]
    assert stats.kstest(xs, "uniform").pvalue > 1e-3


def test_full_random_fraction_is_uniform():
    model = clustered_model()
    rng = np.random.default_rng(1)
    xs = [propose(model, UNIT1, SamplerParams(random_fraction=1.0), rng)["x"] for _ in range(10_000)]
    assert stats.kstest(xs, "uniform").pvalue > 1e-3


def test_proposals_validate_and_are_reproducible():
    h = random_history(MIXED, 30, seed=4)
    params = SamplerParams(random_fraction=0.0)
    model = fit_models(h, MIXED, 400.0, params)
    for seed in range(50):
        c = propose(model, MIXED, params, np.random.default_rng(seed))
        assert MIXED.validate(c) == c
        assert c == propose(model, MIXED, params, np.random.default_rng(seed))


def test_model_sampling_matches_density():
    # draws from the good kernel set follow its density (chi-square on a 1-D histogram)
    ks = KernelSet(np.array([[0.1], [0.6]]), np.array([0.15]), np.array([0]))
    draws = ks.sample(np.random.default_rng(0), 50_000)[:, 0]
    edges = np.linspace(0, 1, 21)
    observed, _ = np.histogram(draws, edges)
    probs = [integrate.quad(lambda x: kde_density(ks, np.array([x])), lo, hi)[0]
             for lo, hi in zip(edges[:-1], edges[1:])]
    expected = np.array(probs) * len(draws)
    assert stats.chisquare(observed, expected * observed.sum() / expected.sum()).pvalue > 1e-3


def test_model_pick_info():
    h = random_history(UNIT1, 10)
    picks = [fit_and_propose(h, UNIT1, SamplerParams(), np.random.default_rng(i))[1] for i in range(30)]
    flags = {p["model_based_pick"] for p in picks}
    assert flags == {"true", "false"}
    assert all(p["model_budget"] == "400.0" for p in picks if p["model_based_pick"] == "true")


def test_two_dim_convergence():
    # repeatedly refitting on a quadratic bowl concentrates proposals near the optimum
    space = make_space([ParameterSpec("x", CONTINUOUS, 0.0, 1.0), ParameterSpec("y", CONTINUOUS, 0.0, 1.0)])
    target = np.array([0.3, 0.7])
    loss = lambda c: float(np.sum((np.array([c["x"], c["y"]]) - target) ** 2))
    params = SamplerParams(random_fraction=0.0)
    late, best = [], []
    for seed in range(8):
        h = random_history(space, 10, seed=seed, loss=loss)
        rng = np.random.default_rng(seed)
        for i in range(150):
            c, _ = fit_and_propose(h, space, params, rng)
            h.append(Observation(10 + i, c, 400.0, loss(c), "success", 400.0, 0.0, 1.0))
        late.append(np.median([o.loss for o in h.observations[-50:]]))
        best.append(min(o.loss for o in h))
    # uniform sampling puts the median of a single draw near 0.2
    assert np.median(late) < 0.005
    assert np.median(best) < 1e-3


def test_params_validation_and_dict():
    p = SamplerParams(gamma=0.2)
    assert SamplerParams.from_dict(p.to_dict()) == p
    assert p.n_min(MIXED) == 4
    for bad in ({"gamma": 1.0}, {"random_fraction": 1.5}, {"bandwidth_factor": 0.5},
                {"min_bandwidth": 0}, {"n_candidates": 0}):
        with pytest.raises(ValueError):
            SamplerParams(**bad)
    with pytest.raises(ValueError):
        SamplerParams.from_dict({"typo": 1})
    assert math.isclose(SamplerParams().random_fraction, 1 / 3)
