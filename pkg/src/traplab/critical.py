"""Critical Galton-Watson trees conditioned to survive (the incipient
infinite cluster), seen through a size-biased spine with critical buds.

Two simulators are provided.  The naive one steps the walk on a lazily grown
tree.  The fast-forward one moves sojourn by sojourn along the spine: while
the walk sits at a spine vertex its excursions into the attached buds are
drawn in aggregate from exact return-time moments, which reaches clock values
far beyond anything a stepper can.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np

from .estat import EstimateReport, loglog_slope, mean_report
from .gwtree.analytics import OffspringLaw
from .gwtree.arena import KIND_PLAIN, NODE_CAP, ROOT, BiasSpec, TreeArena, _draw
from .gwtree.walks import _generation_step, simulate_tree_walk
from .randkit import SeedTree

__all__ = [
    "CriticalLaw",
    "SpineIIC",
    "gen_spine",
    "critical_height_tail",
    "bud_extinction",
    "fast_forward_iic",
    "naive_iic",
    "biased_walk_iic",
    "IICAging",
    "simple_walk_iic",
    "trap_time_tail",
]

K0 = 256  # aggregated excursion count above which a Gaussian sum is used
DEPTH_MARGIN = 40


class CriticalLaw(OffspringLaw):
    """Offspring law with mean one and positive variance."""

    def __init__(self, pmf):
        super().__init__(pmf)
        if abs(self.mean - 1.0) > 1e-12:
            raise ValueError(f"critical law needs mean 1 (got {self.mean!r})")
        if self.variance <= 1e-15:
            raise ValueError("critical law needs Var(Z) > 0")

    @property
    def size_biased(self) -> np.ndarray:
        return np.arange(self.p.size) * self.p

    @property
    def tail_constant(self) -> float:
        """c in P[H >= n] ~ c / n."""
        return 2.0 / self.variance

    def __repr__(self):
        return f"CriticalLaw({self.as_dict()})"


def _critical(law) -> CriticalLaw:
    if isinstance(law, CriticalLaw):
        return law
    if isinstance(law, OffspringLaw):
        return CriticalLaw(law.p)
    return CriticalLaw(law)


class SpineIIC:
    """Lazily grown IIC.  Spine vertices are the ``KIND_PLAIN`` nodes; the
    first child of a spine vertex continues the spine."""

    def __init__(self, law, stream, *, node_cap: int = NODE_CAP):
        self.law = _critical(law)
        self.tree = TreeArena(self.law, "iic", stream, node_cap=node_cap)
        self._spine = [ROOT]

    def spine(self, i: int) -> int:
        while len(self._spine) <= i:
            v = self._spine[-1]
            if self.tree.nchild[v] < 0:
                self.tree.expand(v)
            self._spine.append(int(self.tree.first[v]))
        return self._spine[i]

    def spine_offspring(self, i: int) -> int:
        v = self.spine(i)
        if self.tree.nchild[v] < 0:
            self.tree.expand(v)
        return int(self.tree.nchild[v])

    def buds(self, i: int) -> list[int]:
        self.spine_offspring(i)
        return self.tree.children(self.spine(i))[1:]

    def is_spine(self, v: int) -> bool:
        return self.tree.kind[v] == KIND_PLAIN

    def project(self, v: int) -> int:
        """Spine ancestor of ``v`` (itself on the spine)."""
        while self.tree.kind[v] != KIND_PLAIN:
            v = int(self.tree.parent[v])
        return v

    def spine_index(self, v: int) -> int:
        return int(self.tree.depth[self.project(v)])


def gen_spine(law, stream, **kw) -> SpineIIC:
    return SpineIIC(law, stream, **kw)


# ----------------------------------------------------------------------------
# heights of critical trees


def critical_height_tail(law, n_grid: Sequence[int], trees: int, seed: SeedTree, *, chunk: int = 10**6) -> dict:
    """Empirical P[H >= n] of critical GW trees, with n P[H >= n] compared to
    2 / Var(Z)."""
    law = _critical(law)
    grid = np.asarray(sorted(set(int(n) for n in n_grid)), dtype=np.int64)
    if grid.size == 0 or grid[0] < 0:
        raise ValueError("need non-negative generations")
    top = int(grid[-1])
    alive = np.zeros(top + 1, dtype=np.int64)
    for c, start in enumerate(range(0, trees, chunk)):
        m = min(chunk, trees - start)
        rng = seed.child(c).generator()
        z = np.ones(m, dtype=np.int64)
        alive[0] += m
        for n in range(1, top + 1):
            z = _generation_step(z, law.p, rng)
            z = z[z > 0]
            alive[n] += z.size
            if z.size == 0:
                break
    tail = alive[grid] / trees
    se = np.sqrt(tail * (1 - tail) / trees)
    scaled = grid * tail
    return {
        "n": grid,
        "tail": tail,
        "stderr": se,
        "scaled": scaled,
        "scaled_lo": scaled - 1.96 * grid * se,
        "scaled_hi": scaled + 1.96 * grid * se,
        "target": law.tail_constant,
        "trees": trees,
    }


@nb.njit(cache=True)
def _nb_seed(s):
    np.random.seed(s)


def _seed_numba(node: SeedTree) -> None:
    _nb_seed(int(node.seed_sequence().generate_state(1, np.uint32)[0]))


@nb.njit(cache=True)
def _next_generation(z, pmf):
    out = 0
    rem = z
    left = 1.0
    for k in range(pmf.shape[0] - 1):
        if rem == 0:
            break
        pk = pmf[k] / left if left > 0 else 1.0
        if pk > 1.0:
            pk = 1.0
        c = np.random.binomial(rem, pk)
        out += k * c
        rem -= c
        left -= pmf[k]
    out += (pmf.shape[0] - 1) * rem
    return out


@nb.njit(cache=True)
def _bud_heights(pmf, n, small, heights, sizes, z_out):
    """Grow each tree while its generation stays at most ``small``; trees
    that outgrow it are left with their current generation in ``z_out``."""
    for b in range(n):
        z = 1
        h = 0
        size = 1
        while True:
            z = _next_generation(z, pmf)
            if z == 0:
                break
            h += 1
            size += z
            if z > small:
                break
        heights[b] = h
        sizes[b] = size
        z_out[b] = z


def bud_extinction(law, buds: int, seed: SeedTree, *, cap: int = NODE_CAP, small: int = 256) -> dict:
    """Grow ``buds`` critical trees generation by generation until they die
    out; a tree whose live generation exceeds ``cap`` nodes is counted as
    capped.

    Small generations run in a compiled loop.  The few trees whose generation
    exceeds ``small`` are finished together with vectorised binomial draws,
    whose cost does not grow with the generation size.
    """
    law = _critical(law)
    _seed_numba(seed.child(0))
    heights = np.empty(buds, dtype=np.int64)
    sizes = np.empty(buds, dtype=np.int64)
    z = np.empty(buds, dtype=np.int64)
    _bud_heights(np.asarray(law.p, dtype=float), buds, small, heights, sizes, z)
    idx = np.flatnonzero(z > 0)
    zl = z[idx]
    rng = seed.child(1).generator()
    capped = np.zeros(buds, dtype=bool)
    while idx.size > 8:
        over = zl > cap
        capped[idx[over]] = True
        keep = ~over
        idx, zl = idx[keep], zl[keep]
        if not idx.size:
            break
        zl = _generation_step(zl, law.p, rng)
        live = zl > 0
        heights[idx[live]] += 1
        sizes[idx] += zl
        idx, zl = idx[live], zl[live]
    # the last long-lived trees: scalar draws are cheaper than array calls
    ks = np.flatnonzero(law.p)
    binary = ks.size == 2 and ks[0] == 0
    for b, zb in zip(idx.tolist(), zl.tolist()):
        h = size = 0
        while 0 < zb <= cap:
            if binary:
                zb = int(ks[1]) * int(rng.binomial(zb, law.p[ks[1]]))
            else:
                zb = int(rng.multinomial(zb, law.p) @ np.arange(law.p.size))
            h += zb > 0
            size += zb
        heights[b] += h
        sizes[b] += size
        capped[b] = zb > cap
    return {"heights": heights, "sizes": sizes, "capped": int(capped.sum())}


# ----------------------------------------------------------------------------
# fast-forward kernel


@nb.njit(cache=True)
def _grow_bud(root, cum, depth_cap, first, nchild, ndepth, n_nodes, cap):
    """Breadth-first growth of the bud rooted at ``root``, cut at relative
    depth ``depth_cap``; returns the new node count or -1 at the cap."""
    q = root
    while q < n_nodes:
        if ndepth[q] >= depth_cap:
            nchild[q] = 0
        else:
            k = _draw(cum, np.random.random())
            if n_nodes + k > cap:
                return -1
            first[q] = n_nodes
            nchild[q] = k
            for j in range(k):
                ndepth[n_nodes + j] = ndepth[q] + 1
            n_nodes += k
        q += 1
    return n_nodes


@nb.njit(cache=True)
def _bud_moments(lo, hi, first, nchild, mu, var, beta):
    """Mean and variance of the time to step from v to its parent, bottom up.

    From v with k children the walk makes G ~ Geometric failures (mean
    beta k) before stepping up, each costing 1 + T_c for a uniform child c."""
    for v in range(hi - 1, lo - 1, -1):
        k = nchild[v]
        if k == 0:
            mu[v] = 1.0
            var[v] = 0.0
            continue
        f = first[v]
        m = 0.0
        for j in range(k):
            m += mu[f + j]
        m /= k
        vy = 0.0
        for j in range(k):
            d = mu[f + j] - m
            vy += var[f + j] + d * d
        vy /= k
        ey = 1.0 + m
        eg = beta * k
        mu[v] = 1.0 + eg * ey
        var[v] = eg * vy + eg * (1.0 + eg) * ey * ey


@nb.njit(cache=True)
def _excursion_sum(root, count, first, nchild, mu, var, beta, k0, stack_v, stack_n):
    """Total duration of ``count`` independent walks from ``root`` to its
    parent (final step included)."""
    total = 0.0
    stack_v[0] = root
    stack_n[0] = count
    sp = 1
    while sp > 0:
        sp -= 1
        v = stack_v[sp]
        n = stack_n[sp]
        k = nchild[v]
        if k == 0:
            total += n
            continue
        if n >= k0:
            x = n * mu[v] + math.sqrt(n * var[v]) * np.random.standard_normal()
            total += max(x, float(n))
            continue
        m = np.random.negative_binomial(n, 1.0 / (1.0 + beta * k))
        total += n + m
        f = first[v]
        rem = m
        for j in range(k):
            if rem == 0:
                break
            c = rem if j == k - 1 else np.random.binomial(rem, 1.0 / (k - j))
            if c > 0:
                stack_v[sp] = f + j
                stack_n[sp] = c
                sp += 1
            rem -= c
    return total


@nb.njit(cache=True)
def _ff_replica(cum_sb, cum_p, beta, depth_cap, k0, obs_t, obs_pi, max_level, delta, first, nchild, ndepth, mu,
                var, spine_k, bud_off, bud_root, stack_v, stack_n, max_sojourns):
    """One replica.  Returns (code, clock, furthest spine index); code 0 ok,
    1 sojourn budget exhausted, 3 node or spine capacity exceeded."""
    cap = first.shape[0]
    spine_cap = spine_k.shape[0] - 1
    n_nodes = 0
    n_spine = 0
    n_buds = 0
    bud_off[0] = 0
    i = 0
    s = 0.0
    oi = 0
    no = obs_t.shape[0]
    reached = 0
    soj = 0
    while True:
        if oi >= no and reached >= max_level:
            return 0, s, reached
        if soj >= max_sojourns:
            return 1, s, reached
        while n_spine <= i:
            if n_spine >= spine_cap:
                return 3, s, reached
            k = _draw(cum_sb, np.random.random())
            spine_k[n_spine] = k
            for b in range(k - 1):
                if n_nodes >= cap or n_buds >= bud_root.shape[0]:
                    return 3, s, reached
                r = n_nodes
                ndepth[r] = 0
                n2 = _grow_bud(r, cum_p, depth_cap, first, nchild, ndepth, n_nodes + 1, cap)
                if n2 < 0:
                    return 3, s, reached
                _bud_moments(r, n2, first, nchild, mu, var, beta)
                n_nodes = n2
                bud_root[n_buds] = r
                n_buds += 1
            n_spine += 1
            bud_off[n_spine] = n_buds
        k = spine_k[i]
        nb_ = k - 1
        if i == 0:
            p_leave = 1.0 / k
            fwd = 1.0
        else:
            p_leave = (1.0 + beta) / (1.0 + beta * k)
            fwd = beta / (1.0 + beta)
        dur = 1.0
        if nb_ > 0:
            m = np.random.geometric(p_leave) - 1
            dur += m
            rem = m
            for j in range(nb_):
                if rem == 0:
                    break
                c = rem if j == nb_ - 1 else np.random.binomial(rem, 1.0 / (nb_ - j))
                if c > 0:
                    dur += _excursion_sum(bud_root[bud_off[i] + j], c, first, nchild, mu, var, beta, k0, stack_v,
                                          stack_n)
                rem -= c
        while oi < no and obs_t[oi] < s + dur:
            obs_pi[oi] = i
            oi += 1
        s += dur
        if np.random.random() < fwd:
            i += 1
        else:
            i -= 1
        if i > reached:
            reached = i
            if i <= max_level:
                delta[i - 1] = s
        soj += 1


@dataclass
class FFResult:
    pis: np.ndarray  # (replicas, n_obs) spine index at each observation time
    deltas: np.ndarray  # (replicas, max_level) first hitting time of spine index j
    codes: np.ndarray
    depth_cap: int
    flags: tuple[str, ...] = ()

    @property
    def ok(self) -> np.ndarray:
        return self.codes == 0


def fast_forward_iic(
    law,
    beta: float,
    obs_times,
    replicas: int,
    seed: SeedTree,
    *,
    max_level: int = 0,
    depth_cap: Optional[int] = None,
    k0: int = K0,
    node_cap: int = 2 * 10**6,
    spine_cap: int = 10**5,
    max_sojourns: int = 10**8,
) -> FFResult:
    """Spine index at each of ``obs_times`` and spine hitting times, by
    sojourn-level simulation of the beta-biased walk on the IIC.

    Buds are cut at ``depth_cap`` (default: the depth whose return time
    beta^depth exceeds the horizon, plus a margin of 40)."""
    law = _critical(law)
    if not beta > 1:
        raise ValueError("fast-forward needs beta > 1")
    obs = np.sort(np.asarray(obs_times, dtype=float))
    if depth_cap is None:
        horizon = max(float(obs.max()) if obs.size else 1.0, beta ** (2 * max_level))
        depth_cap = int(math.ceil(math.log(max(horizon, 2.0)) / math.log(beta))) + DEPTH_MARGIN
    cum_sb = np.cumsum(law.size_biased)
    cum_sb[-1] = 1.0
    cum_p = np.cumsum(law.p)
    cum_p[-1] = 1.0
    first = np.zeros(node_cap, dtype=np.int64)
    nchild = np.zeros(node_cap, dtype=np.int64)
    ndepth = np.zeros(node_cap, dtype=np.int64)
    mu = np.zeros(node_cap)
    var = np.zeros(node_cap)
    stack_v = np.zeros(node_cap, dtype=np.int64)
    stack_n = np.zeros(node_cap, dtype=np.int64)
    spine_k = np.zeros(spine_cap + 1, dtype=np.int64)
    bud_off = np.zeros(spine_cap + 1, dtype=np.int64)
    bud_root = np.zeros(node_cap, dtype=np.int64)
    pis = np.full((replicas, obs.size), -1, dtype=np.int64)
    deltas = np.full((replicas, max_level), np.nan)
    codes = np.zeros(replicas, dtype=np.int64)
    for r in range(replicas):
        _seed_numba(seed.child(r))
        d = np.full(max_level, np.nan)
        code, _, _ = _ff_replica(cum_sb, cum_p, float(beta), int(depth_cap), int(k0), obs, pis[r], int(max_level),
                                 d, first, nchild, ndepth, mu, var, spine_k, bud_off, bud_root, stack_v, stack_n,
                                 int(max_sojourns))
        deltas[r] = d
        codes[r] = code
    flags = []
    if np.any(codes == 1):
        flags.append(f"sojourn-budget:{int((codes == 1).sum())}")
    if np.any(codes == 3):
        flags.append(f"node-cap:{int((codes == 3).sum())}")
    return FFResult(pis, deltas, codes, int(depth_cap), tuple(flags))


def naive_iic(law, beta: float, obs_steps, replicas: int, seed: SeedTree) -> np.ndarray:
    """Spine index at integer ``obs_steps`` from step-by-step walks."""
    law = _critical(law)
    obs = np.sort(np.asarray(obs_steps, dtype=np.int64))
    out = np.empty((replicas, obs.size), dtype=np.int64)
    for r in range(replicas):
        node = seed.child(r)
        sp = SpineIIC(law, node.child(0))
        rec = simulate_tree_walk(sp.tree, BiasSpec(beta=beta), int(obs[-1]), node.child(1), obs_steps=obs)
        out[r] = [sp.spine_index(int(v)) for v in rec.observed_nodes]
    return out


# ----------------------------------------------------------------------------
# experiments


@dataclass
class IICAging:
    n: int
    beta: float
    aging: dict  # (a, b) -> EstimateReport of P[pi(X_{e^{an}}) = pi(X_{e^{bn}})]
    t_grid: np.ndarray
    profile: np.ndarray  # (replicas, len(t_grid)) ln Delta_{floor(nt)} / (n ln beta)
    monotone: bool
    flags: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)


def biased_walk_iic(
    law,
    beta: float,
    n: int,
    pairs: Sequence[tuple[float, float]],
    replicas: int,
    seed: SeedTree,
    *,
    t_grid: Sequence[float] = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0),
    **kw,
) -> IICAging:
    """Extremal aging P[pi(X_{e^{an}}) = pi(X_{e^{bn}})] for each (a, b) in
    ``pairs`` and the hitting-time profile ln Delta_{nt} / (n ln beta), where
    Delta_j is the first hitting time of the j-th spine vertex."""
    law = _critical(law)
    exps = sorted({float(x) for ab in pairs for x in ab})
    times = np.exp(np.array(exps) * n)
    tg = np.asarray(t_grid, dtype=float)
    levels = np.maximum(1, np.floor(n * tg).astype(np.int64))
    ff = fast_forward_iic(law, beta, times, replicas, seed, max_level=int(levels.max()), **kw)
    ok = ff.ok
    col = {e: i for i, e in enumerate(exps)}
    aging = {}
    for a, b in pairs:
        same = (ff.pis[ok, col[float(a)]] == ff.pis[ok, col[float(b)]]).astype(float)
        rep = mean_report(same, method="extremal-aging")
        rep.extra.update(a=a, b=b, limit=min(a, b) / max(a, b))
        aging[(a, b)] = rep
    prof = np.log(ff.deltas[ok][:, levels - 1]) / (n * math.log(beta))
    monotone = bool(np.all(np.diff(prof, axis=1) >= 0))
    return IICAging(n, float(beta), aging, tg, prof, monotone, ff.flags,
                    {"used": int(ok.sum()), "depth_cap": ff.depth_cap})


def simple_walk_iic(
    law,
    n_grid: Sequence[int],
    replicas: int,
    seed: SeedTree,
    *,
    beta: float = 1.0,
    n_boot: int = 1000,
) -> EstimateReport:
    """Slope of ln median |X_n| against ln n for the walk on the IIC."""
    law = _critical(law)
    grid = np.asarray(sorted(set(int(n) for n in n_grid)), dtype=np.int64)
    rows = np.empty((replicas, grid.size))
    for r in range(replicas):
        node = seed.child(r)
        sp = SpineIIC(law, node.child(0))
        rec = simulate_tree_walk(sp.tree, BiasSpec(beta=beta), int(grid[-1]), node.child(1), obs_steps=grid)
        rows[r] = rec.observed
    # |X_n| = 0 is possible for single replicas; medians stay positive
    rep = loglog_slope(grid, replicas=np.maximum(rows, 0.5), n_boot=n_boot, seed=0)
    rep.method = "iic-displacement-slope"
    rep.extra["beta"] = beta
    return rep


def trap_time_tail(
    law,
    beta: float,
    t_grid: Sequence[float],
    buds: int,
    seed: SeedTree,
    *,
    depth_cap: Optional[int] = None,
    k0: int = K0,
) -> dict:
    """P[T >= t] for the duration T of one excursion from a spine vertex into
    a fresh critical bud (the step into the bud included)."""
    law = _critical(law)
    t = np.asarray(t_grid, dtype=float)
    if depth_cap is None:
        depth_cap = int(math.ceil(math.log(t.max()) / math.log(beta))) + DEPTH_MARGIN
    _seed_numba(seed)
    durations = _trap_durations(np.cumsum(law.p), float(beta), int(depth_cap), int(k0), int(buds))
    tail = np.array([(durations >= x).mean() for x in t])
    return {"t": t, "tail": tail, "tail_log_t": tail * np.log(t), "durations": durations, "depth_cap": depth_cap}


@nb.njit(cache=True)
def _trap_durations(cum_p, beta, depth_cap, k0, buds):
    cum = cum_p.copy()
    cum[-1] = 1.0
    cap = 1 << 20
    first = np.zeros(cap, dtype=np.int64)
    nchild = np.zeros(cap, dtype=np.int64)
    ndepth = np.zeros(cap, dtype=np.int64)
    mu = np.zeros(cap)
    var = np.zeros(cap)
    stack_v = np.zeros(cap, dtype=np.int64)
    stack_n = np.zeros(cap, dtype=np.int64)
    out = np.empty(buds)
    for b in range(buds):
        ndepth[0] = 0
        n2 = _grow_bud(0, cum, depth_cap, first, nchild, ndepth, 1, cap)
        if n2 < 0:
            out[b] = np.inf
            continue
        _bud_moments(0, n2, first, nchild, mu, var, beta)
        out[b] = 1.0 + _excursion_sum(0, 1, first, nchild, mu, var, beta, k0, stack_v, stack_n)
    return out
