from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointsearch.scheduler import (Continue, Done, RequestNewConfig, Rung, RungEntry, SchedulerError,
                                   SchedulerState, Wait, bracket_layout, geometric_budgets, promote)


def test_ladder_reference_budgets():
    assert geometric_budgets(400, 10800, 3).budgets == (400.0, 1200.0, 3600.0, 10800.0)


def test_ladder_single_and_powers():
    assert geometric_budgets(5, 5, 3).budgets == (5.0,)
    assert geometric_budgets(1, 27, 3).budgets == (1.0, 3.0, 9.0, 27.0)


def test_ladder_anchored_at_top():
    ladder = geometric_budgets(300, 10800, 3)
    assert ladder.b_max == 10800.0
    assert ladder.b_min == 400.0


@pytest.mark.parametrize("args", [(0, 10, 3), (10, 5, 3), (1, 10, 1), (1, 10, 0.5)])
def test_ladder_rejects(args):
    with pytest.raises(SchedulerError):
        geometric_budgets(*args)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100), st.floats(1.0, 1e4), st.sampled_from([2, 3, 4, 1.5]))
def test_ladder_ratio_property(b_min, span, eta):
    ladder = geometric_budgets(b_min, b_min * span, eta)
    b = ladder.budgets
    assert b[-1] == pytest.approx(b_min * span)
    assert b[0] >= b_min * (1 - 1e-9)
    for lo, hi in zip(b, b[1:]):
        assert hi / lo == pytest.approx(eta, rel=1e-9)


def test_bracket_layouts():
    assert bracket_layout(3, 3, 3) == [(27, 0), (9, 1), (3, 2), (1, 3)]
    assert bracket_layout(3, 2, 3) == [(12, 1), (4, 2), (1, 3)]
    assert bracket_layout(3, 1, 3) == [(6, 2), (2, 3)]
    assert bracket_layout(3, 0, 3) == [(4, 3)]
    assert bracket_layout(0, 0, 2) == [(1, 0)]
    with pytest.raises(SchedulerError):
        bracket_layout(3, 4, 3)


def _rung(losses):
    r = Rung(1.0, len(losses))
    for i, loss in enumerate(losses):
        e = RungEntry(i)
        e.status, e.loss = ("failed", None) if loss is None else ("success", loss)
        r.entries.append(e)
    return r


def test_promote_best_third():
    assert promote(_rung([0.5, 0.2, 0.9]), 3) == [1]


def test_promote_tie_goes_to_earliest():
    assert promote(_rung([0.4, 0.4, 0.4]), 3) == [0]


def test_promote_excludes_failures():
    r = _rung([0.1, None, None])
    assert promote(r, 3) == []
    assert promote(r, 3, next_capacity=1) == [0]
    assert promote(r, 3, next_capacity=0) == []


def test_promote_needs_resolved():
    r = Rung(1.0, 2)
    r.add(0)
    with pytest.raises(SchedulerError):
        promote(r, 3)


def test_fresh_state_requests_lowest_budget():
    state = SchedulerState(geometric_budgets(1, 27, 3))
    a = state.next_action()
    assert isinstance(a, RequestNewConfig) and a.budget == 1.0 and a.bracket == 0


# --- brute-force oracle -----------------------------------------------------

def oracle_hyperband(s_max: int, eta: int, loss_of):
    """Textbook synchronous Hyperband written with plain integer arithmetic.

    Returns, per bracket, the list of (budget_index, [trial ids]) rungs.
    Trial ids count up in the order configurations are drawn.
    """
    out = []
    next_id = 0
    for s in range(s_max, -1, -1):
        n = -(-(s_max + 1) * eta ** s // (s + 1))
        ids = list(range(next_id, next_id + n))
        next_id += n
        rungs = []
        for i in range(s + 1):
            rungs.append((s_max - s + i, ids))
            ranked = sorted(ids, key=lambda t: (loss_of(t, s_max - s + i), ids.index(t)))
            keep = n // eta ** (i + 1)
            ids = ranked[:keep]
        out.append(rungs)
    return out


def drive(state: SchedulerState, loss_of, rng: np.random.Generator, parallel: int = 1):
    """Event loop: resolve a random pending job whenever asked to wait or slots are full."""
    pending: list[tuple[int, float]] = []
    issued = []
    while True:
        action = state.next_action() if len(pending) < parallel else Wait()
        if isinstance(action, Done):
            assert not pending
            return issued
        if isinstance(action, Wait):
            assert pending, "Wait with nothing in flight"
            tid, b = pending.pop(int(rng.integers(len(pending))))
            state.record_result(tid, b, loss_of(tid, b))
            continue
        issued.append(action)
        pending.append((action.trial_id, action.budget))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("parallel", [1, 4])
def test_full_cycle_matches_oracle(seed, parallel):
    ladder = geometric_budgets(1, 27, 3)
    table = np.random.default_rng(seed).random((200, 4))
    state = SchedulerState(ladder, max_brackets=4)
    issued = drive(state, lambda t, b: float(table[t, ladder.budgets.index(b)]),
                   np.random.default_rng(seed + 100), parallel)
    expected = oracle_hyperband(3, 3, lambda t, i: float(table[t, i]))
    populations = []
    for it, rungs in enumerate(expected):
        got = [a for a in issued if a.bracket == it]
        pops = []
        for bi, ids in rungs:
            at = sorted(a.trial_id for a in got if a.budget == ladder.budgets[bi])
            assert at == sorted(ids)
            pops.append(len(at))
        populations.append(tuple(pops))
    assert populations == [(27, 9, 3, 1), (12, 4, 1), (6, 2), (4,)]
    assert sum(populations[0]) == 40


def test_conservation_and_monotone_budgets():
    ladder = geometric_budgets(1, 81, 3)
    rng = np.random.default_rng(7)
    state = SchedulerState(ladder, max_brackets=10, overlap_brackets=True)
    issued = drive(state, lambda t, b: float(rng.random()), np.random.default_rng(8), parallel=6)
    chains: dict[int, list[float]] = {}
    for a in issued:
        chains.setdefault(a.trial_id, []).append(a.budget)
        if isinstance(a, RequestNewConfig):
            assert len(chains[a.trial_id]) == 1
    for budgets in chains.values():
        for lo, hi in zip(budgets, budgets[1:]):
            assert hi / lo == pytest.approx(3.0)
    for b in state.brackets:
        assert b.complete
        for lower, upper in zip(b.rungs, b.rungs[1:]):
            assert upper.capacity == lower.capacity // 3
            resolved = {e.trial_id for e in lower.entries if e.status != "pending"}
            assert {e.trial_id for e in upper.entries} <= resolved


def test_failures_shrink_promotions():
    ladder = geometric_budgets(1, 9, 3)
    state = SchedulerState(ladder, max_brackets=1)
    # every trial but one fails at the base rung
    issued = drive(state, lambda t, b: 0.5 if t == 4 else None, np.random.default_rng(0))
    later = [a for a in issued if isinstance(a, Continue)]
    assert [(a.trial_id, a.budget) for a in later] == [(4, 3.0), (4, 9.0)]


def test_all_failed_bracket_stops():
    state = SchedulerState(geometric_budgets(1, 9, 3), max_brackets=2)
    issued = drive(state, lambda t, b: float("nan"), np.random.default_rng(0))
    assert not any(isinstance(a, Continue) for a in issued)
    assert all(b.stopped for b in state.brackets)


def test_replay_determinism():
    ladder = geometric_budgets(1, 27, 3)
    table = np.random.default_rng(3).random((500, 4))

    def loss(t, b):
        return float(table[t, ladder.budgets.index(b)])

    runs = []
    for _ in range(2):
        state = SchedulerState(ladder, max_brackets=8)
        runs.append(drive(state, loss, np.random.default_rng(11), parallel=3))
        runs[-1].append(state.snapshot())
    assert runs[0] == runs[1]


def test_done_after_bracket_sequence():
    state = SchedulerState(geometric_budgets(3, 3, 3), max_brackets=2)
    assert isinstance(state.next_action(), RequestNewConfig)
    assert isinstance(state.next_action(), Wait)
    state.record_result(0, 3.0, 1.0)
    assert isinstance(state.next_action(), RequestNewConfig)
    state.record_result(1, 3.0, 1.0)
    assert isinstance(state.next_action(), Done)


def test_record_result_errors():
    state = SchedulerState(geometric_budgets(1, 9, 3))
    a = state.next_action()
    with pytest.raises(SchedulerError):
        state.record_result(99, 1.0, 0.0)
    with pytest.raises(SchedulerError):
        state.record_result(a.trial_id, 3.0, 0.0)
    state.record_result(a.trial_id, 1.0, 0.0)
    with pytest.raises(SchedulerError):
        state.record_result(a.trial_id, 1.0, 0.0)


def test_single_bracket_accepts_new_configs_at_a_time():
    state = SchedulerState(geometric_budgets(1, 27, 3))
    for _ in range(27):
        a = state.next_action()
        assert isinstance(a, RequestNewConfig) and a.bracket == 0
    assert isinstance(state.next_action(), Wait)
    assert math.isclose(state.brackets[0].rungs[0].budget, 1.0)
