from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from traplab.estat import (
    EstimateReport,
    bootstrap_ci,
    hill_sensitivity,
    hill_tail_index,
    ks_two_sample,
    loglog_slope,
    mean_report,
    median_normalize,
)
from traplab.randkit import SeedTree, TailSpec, sample_pareto


def test_report_invariants():
    r = EstimateReport(1.0, 0.1, (1.2, 1.5), 10, "x")
    assert r.contains(1.0)
    with pytest.raises(ValueError):
        EstimateReport(1.0, 0.1, (0, 2), 0, "x")


@pytest.mark.parametrize("alpha,lo,hi", [(0.5, 0.48, 0.52), (1.5, 1.44, 1.56)])
def test_hill_on_exact_pareto(alpha, lo, hi):
    x = sample_pareto(TailSpec(alpha), SeedTree(21), 10**6)
    r = hill_tail_index(x, k=10**4)
    assert lo <= r.estimate <= hi


def test_hill_ties_and_size():
    with pytest.raises(ValueError):
        hill_tail_index(np.ones(1000))
    with pytest.raises(ValueError):
        hill_tail_index(np.arange(1, 100))
    x = np.concatenate([np.arange(1, 1000, dtype=float), [990.0] * 20])
    assert "ties" in hill_tail_index(x, 0.2).flags


def test_hill_sensitivity_keys():
    x = sample_pareto(TailSpec(1.0), SeedTree(2), 10**5)
    out = hill_sensitivity(x)
    assert set(out) == {0.005, 0.01, 0.02}


def test_ks_examples():
    a = np.random.default_rng(0).random(500)
    assert ks_two_sample(a, a) == 0.0
    assert ks_two_sample(a, a + 2.0) == 1.0
    with pytest.raises(ValueError):
        ks_two_sample([], a)


def test_ks_uniform_quantile():
    rng = np.random.default_rng(1)
    hits = sum(ks_two_sample(rng.random(10**4), rng.random(10**4)) <= 0.03 for _ in range(1000))
    assert hits >= 950


def test_ks_matches_scipy():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=300), rng.normal(0.2, size=400)
    assert ks_two_sample(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_ks_symmetric_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=50), rng.exponential(size=70), rng.random(30)
    assert ks_two_sample(a, b) == ks_two_sample(b, a)
    assert ks_two_sample(a, c) <= ks_two_sample(a, b) + ks_two_sample(b, c) + 1e-12


def test_loglog_examples():
    g = np.array([10.0, 20, 50, 100, 1000])
    assert abs(loglog_slope(g, 3 * g**2).estimate - 2.0) <= 1e-12
    assert abs(loglog_slope(g, np.full(5, 4.0)).estimate) <= 1e-12
    noise = np.random.default_rng(5).uniform(-0.01, 0.01, g.size)
    assert 1.49 <= loglog_slope(g, g**1.5 * (1 + noise)).estimate <= 1.51
    with pytest.raises(ValueError):
        loglog_slope(g, -g)
    with pytest.raises(ValueError):
        loglog_slope(g[:2], g[:2])


@settings(max_examples=30, deadline=None)
@given(c=st.floats(1e-3, 1e3), p=st.floats(-2, 2))
def test_loglog_rescaling(c, p):
    g = np.geomspace(1, 1e4, 7)
    v = g**p * (1 + 0.1 * np.sin(g))
    a, b = loglog_slope(g, v), loglog_slope(g, c * v)
    assert a.estimate == pytest.approx(b.estimate, abs=1e-9)
    assert b.extra["intercept"] - a.extra["intercept"] == pytest.approx(np.log(c), abs=1e-9)


def test_loglog_replicas_bootstrap_deterministic():
    rng = np.random.default_rng(8)
    g = np.geomspace(10, 1e4, 8)
    reps = g**0.5 * rng.lognormal(0, 0.3, size=(200, g.size))
    r1 = loglog_slope(g, replicas=reps, seed=3)
    r2 = loglog_slope(g, replicas=reps, seed=3)
    assert r1.ci == r2.ci
    assert r1.contains(0.5)


def test_bootstrap_and_mean():
    x = np.random.default_rng(2).normal(1.0, 1.0, 2000)
    b = bootstrap_ci(x, seed=1)
    m = mean_report(x)
    assert b.overlaps(m)
    assert b.ci == pytest.approx(m.ci, abs=0.01)
    assert median_normalize(x).mean() > 0
