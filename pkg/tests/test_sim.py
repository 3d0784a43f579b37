import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import load
from stopcert.preexp import LocPoly
from stopcert.pts import MultipleEnabledTransitions
from stopcert.sim import (RunConfig, counter_uniforms, estimate_at_steps, estimate_expectation,
                          estimate_martingale_drift, estimate_stopping_time, simulate)


def test_horizon_must_be_positive():
    with pytest.raises(ValueError):
        RunConfig(10, 0)
    with pytest.raises(ValueError):
        RunConfig(0, 5)


@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 50), st.integers(-1, 50))
def test_counter_stream_is_uniform_and_deterministic(seed, run, step):
    runs = np.array([run, run + 1])
    u = counter_uniforms(seed, runs, step, 3)
    assert np.array_equal(u, counter_uniforms(seed, runs, step, 3))
    assert ((u >= 0) & (u < 1)).all()
    assert not np.array_equal(u[0], u[1])


def test_hare_trajectories_end_past_the_tortoise(hare):
    trajs = list(simulate(hare, RunConfig(200, 200, seed=3)))
    assert len(trajs) == 200
    for t in trajs:
        assert t.hit is not None
        last = t.configurations[-1]
        assert last.location == "lF"
        assert last.valuation[0] > last.valuation[1]
        assert [c.step for c in t.configurations] == list(range(len(t.configurations)))


def test_markov_never_stops(markov):
    est = estimate_expectation(markov, RunConfig(100, 7, seed=1), "x1 - x2")
    assert est.truncated_fraction == 1 and est.unreliable and est.used == 0


def test_constant_expression_has_no_spread(hare):
    est = estimate_expectation(hare, RunConfig(500, 200, seed=2), "7/2", at=4)
    assert est.mean == 3.5 and est.stderr == 0


@pytest.mark.parametrize("exact", [False, True])
def test_markov_decay_at_step_five(markov, exact):
    est = estimate_expectation(markov, RunConfig(20_000, 10, seed=5, exact=exact), "x1 - x2", at=5)
    assert est.within((5 / 6) ** 5)


def test_workers_do_not_change_results(hare, markov):
    for p, expr, exact in [(hare, "x1 - 2*x2", False), (markov, "x1 - x2", True)]:
        one = estimate_at_steps(p, RunConfig(30_000, 50, seed=8, exact=exact), expr, [3, 6])
        four = estimate_at_steps(p, RunConfig(30_000, 50, seed=8, workers=4, exact=exact), expr, [3, 6])
        assert one == four


def test_seed_changes_the_sample(hare):
    a = estimate_stopping_time(hare, RunConfig(2000, 200, seed=1))
    b = estimate_stopping_time(hare, RunConfig(2000, 200, seed=2))
    assert a.mean != b.mean


def test_exact_and_float_paths_share_the_random_stream(hare):
    cfg = RunConfig(800, 200, seed=4)
    a = estimate_stopping_time(hare, cfg)
    b = estimate_stopping_time(hare, RunConfig(800, 200, seed=4, exact=True))
    assert a.mean == pytest.approx(b.mean, abs=1e-9)


def test_truncation_flags_estimate(hare):
    est = estimate_stopping_time(hare, RunConfig(1000, 10, seed=1))
    assert est.truncated_fraction > 0.01 and est.unreliable


def test_demonic_system_fails_at_runtime():
    p = load("demonic")
    with pytest.raises(MultipleEnabledTransitions):
        estimate_expectation(p, RunConfig(50, 20, seed=0), "x", at=10)


def test_zero_martingale_has_exact_zero_drift(markov):
    for d in estimate_martingale_drift(markov, RunConfig(500, 10, seed=0), LocPoly(markov, "0"), 5):
        assert d.mean == 0 and d.stderr == 0


def test_betting_drift_vanishes_but_stop_value_does_not(betting):
    cfg = RunConfig(20_000, 60, seed=11, exact=True)
    for d in estimate_martingale_drift(betting, cfg, LocPoly(betting, "x2"), 6):
        assert d.within(0)
    at_stop = estimate_expectation(betting, cfg, "x2")
    assert at_stop.mean == 1 and not at_stop.unreliable
    assert estimate_expectation(betting, cfg, "x2", at=5).within(0)


@pytest.mark.slow
def test_hare_stopping_time(hare):
    est = estimate_expectation(hare, RunConfig(100_000, 500, seed=6, stop="x1 - x2 > 0"), "k")
    assert est.mean >= 20 - 4 * est.stderr
    assert est.truncated_fraction == 0
