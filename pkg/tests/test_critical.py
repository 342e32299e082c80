from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from traplab.critical import (
    CriticalLaw,
    biased_walk_iic,
    bud_extinction,
    critical_height_tail,
    fast_forward_iic,
    gen_spine,
    naive_iic,
    simple_walk_iic,
    trap_time_tail,
)
from traplab.gwtree.analytics import OffspringLaw
from traplab.randkit import SeedTree

from oracles import chi2_pvalue, exact_trap_height_tail

BIN = CriticalLaw({0: 0.5, 2: 0.5})
THREE = CriticalLaw({0: 0.5, 1: 0.25, 3: 0.25})


def _tv(a, b, bins=10):
    """Total variation between two samples on pooled-quantile bins."""
    edges = np.unique(np.quantile(np.concatenate([a, b]), np.linspace(0, 1, bins + 1)[1:-1]))
    ha = np.bincount(np.searchsorted(edges, a, side="right"), minlength=edges.size + 1) / a.size
    hb = np.bincount(np.searchsorted(edges, b, side="right"), minlength=edges.size + 1) / b.size
    return 0.5 * np.abs(ha - hb).sum()


def test_law_validation():
    with pytest.raises(ValueError):
        CriticalLaw({1: 1.0})
    with pytest.raises(ValueError):
        CriticalLaw({0: 0.4, 2: 0.6})
    assert BIN.variance == pytest.approx(1.0)
    assert BIN.tail_constant == pytest.approx(2.0)
    assert np.allclose(BIN.size_biased, [0, 0, 1])
    assert np.allclose(THREE.size_biased, [0, 0.25, 0, 0.75])


def test_spine_binary_has_two_children():
    sp = gen_spine(BIN, SeedTree(1))
    assert all(sp.spine_offspring(i) == 2 for i in range(500))
    assert all(len(sp.buds(i)) == 1 for i in range(50))


def test_spine_offspring_size_biased():
    sp = gen_spine(THREE, SeedTree(2))
    counts = np.zeros(4)
    for i in range(10**5):
        counts[sp.spine_offspring(i)] += 1
    assert chi2_pvalue(counts, THREE.size_biased) >= 0.001
    # mean of the size-biased law is E[Z^2]
    se = math.sqrt(counts @ (np.arange(4) ** 2) / counts.sum() - (counts @ np.arange(4) / counts.sum()) ** 2)
    assert abs(counts @ np.arange(4) / counts.sum() - THREE.second_moment) <= 4 * se / math.sqrt(counts.sum())


def test_binary_spine_mean():
    sp = gen_spine(BIN, SeedTree(3))
    ks = [sp.spine_offspring(i) for i in range(1000)]
    assert np.mean(ks) == BIN.second_moment == 2.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_projection_idempotent(seed):
    sp = gen_spine(BIN, SeedTree(seed))
    for i in range(20):
        for b in sp.buds(i):
            sp.tree.expand(b)
    sp.tree.grow_all(max_depth=25)
    for v in range(1, sp.tree.n_nodes):
        p = sp.project(v)
        assert sp.project(p) == p and sp.is_spine(p)
        assert sp.tree.depth[p] <= sp.tree.depth[v]
    assert sp.project(sp.spine(7)) == sp.spine(7)


def test_spine_is_a_path():
    sp = gen_spine(THREE, SeedTree(4))
    for i in range(1, 200):
        assert sp.tree.parent[sp.spine(i)] == sp.spine(i - 1)
        assert sp.spine_index(sp.spine(i)) == i
        assert sum(sp.is_spine(c) for c in sp.tree.children(sp.spine(i - 1))) == 1


def test_buds_extinguish():
    out = bud_extinction(BIN, 10**6, SeedTree(5))
    assert out["capped"] == 0
    assert out["heights"].min() == 0


def test_height_tail_against_exact():
    r = critical_height_tail(BIN, [0, 1, 5, 10, 20], 10**6, SeedTree(6))
    exact = exact_trap_height_tail(BIN.p, 20)
    assert r["tail"][0] == 1.0
    for n, t, se in zip(r["n"], r["tail"], r["stderr"]):
        assert abs(t - exact[n]) <= 4 * se + 1e-12


def test_height_tail_scaling_trend():
    """n P[H >= n] climbs towards 2 / Var(Z); the exact values sit at about
    1.60 for n = 20 and 1.88 for n = 100."""
    r = critical_height_tail(BIN, [20, 50, 100], 2 * 10**6, SeedTree(7))
    exact = exact_trap_height_tail(BIN.p, 100)
    assert np.all(np.diff(r["scaled"]) > 0)
    for n, lo, hi in zip(r["n"], r["scaled_lo"], r["scaled_hi"]):
        assert lo - 0.02 <= n * exact[n] <= hi + 0.02


def test_fast_forward_matches_naive():
    n = 20_000
    times = [1000, 10_000]
    ff = fast_forward_iic(BIN, 2.0, times, n, SeedTree(8))
    nv = naive_iic(BIN, 2.0, times, n, SeedTree(9))
    assert ff.ok.all()
    for j in range(len(times)):
        assert _tv(ff.pis[:, j], nv[:, j]) <= 0.02


def test_fast_forward_validation():
    with pytest.raises(ValueError):
        fast_forward_iic(BIN, 1.0, [10.0], 1, SeedTree(0))
    ff = fast_forward_iic(BIN, 2.0, [0.0, 0.5], 5, SeedTree(0))
    assert np.all(ff.pis[:, 0] == 0)


def test_aging_trivial_and_monotone():
    res = biased_walk_iic(BIN, 2.0, 15, [(1.0, 1.0), (1.0, 1.5), (1.0, 2.0), (1.0, 3.0)], 1000, SeedTree(10))
    assert res.aging[(1.0, 1.0)].estimate == 1.0
    est = [res.aging[(1.0, b)].estimate for b in (1.0, 1.5, 2.0, 3.0)]
    assert all(x >= y - 0.01 for x, y in zip(est, est[1:]))
    assert res.monotone
    assert np.all(np.isfinite(res.profile))


def test_extremal_aging_half():
    res = biased_walk_iic(BIN, 2.0, 25, [(1.0, 2.0)], 5000, SeedTree(11))
    assert abs(res.aging[(1.0, 2.0)].estimate - 0.5) <= 0.05


def test_trap_time_slow_variation():
    t = np.array([1e3, 1e4, 1e5, 1e6])
    r = trap_time_tail(BIN, 2.0, t, 10**5, SeedTree(12))
    v = r["tail_log_t"]
    assert np.all(v > 0)
    mid = np.exp(np.mean(np.log(v)))
    assert np.all((v >= 0.5 * mid) & (v <= 2 * mid))


def test_simple_walk_displacement():
    grid = np.unique(np.geomspace(100, 10**6, 9).astype(int))
    rep = simple_walk_iic(BIN, grid, 100, SeedTree(13), n_boot=300)
    assert 0.28 <= rep.estimate <= 0.38
    # a biased walk is stuck in logarithmic depth: its slope is far smaller
    control = simple_walk_iic(BIN, grid, 100, SeedTree(14), beta=2.0, n_boot=300)
    assert control.ci[1] < rep.ci[0] and control.estimate < 0.25


def test_accepts_offspring_law():
    sp = gen_spine(OffspringLaw({0: 0.5, 2: 0.5}), SeedTree(1))
    assert sp.spine_offspring(0) == 2
