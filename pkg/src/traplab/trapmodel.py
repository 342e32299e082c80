"""Directed and beta-biased Bouchaud trap models on Z.

The embedded walk jumps right with probability beta/(beta+1) (always, when
beta is infinite); at site x it waits tau_x * e_i with e_i i.i.d. mean-one
exponentials.  S(n) is the clock and X_t = Y_{S^{-1}(t)}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from .estat import EstimateReport, ks_two_sample, loglog_slope, median_normalize
from .randkit import SeedTree, TailSpec, arcsine_cdf, as_generator, sample_pareto, sample_stable_ca

__all__ = [
    "TrapLandscape",
    "ClockedTrajectory",
    "simulate_btm",
    "observe_btm",
    "scaling_exponent_btm",
    "aging_probability",
    "clock_vs_stable",
    "max_backtrack",
]

BLOCK = 4096
CHUNK = 1 << 16
MIN_REPLICAS = 100


def _block_key(b: int) -> int:
    # interleave nonnegative and negative block indices
    return 2 * b if b >= 0 else -2 * b - 1


class TrapLandscape:
    """Lazily generated, memoised trap depths over Z.

    Sites are drawn in blocks of ``BLOCK`` from ``stream.child(block_key)``,
    so tau_x depends only on (stream, x).  ``fixed`` replaces the Pareto law
    by a constant depth (finite-mean control).
    """

    def __init__(self, tail: Optional[TailSpec], stream: SeedTree, fixed: Optional[float] = None):
        if tail is None and fixed is None:
            raise ValueError("need a tail law or a fixed depth")
        if fixed is not None and fixed <= 0:
            raise ValueError("fixed depth must be positive")
        self.tail = tail
        self.fixed = fixed
        self.stream = stream
        self._blocks: dict[int, np.ndarray] = {}
        self.pos = np.empty(0)
        self.neg = np.empty(0)  # neg[i] is site -(i+1)

    @property
    def scale(self) -> float:
        return self.fixed if self.fixed is not None else self.tail.scale

    def _block(self, b: int) -> np.ndarray:
        blk = self._blocks.get(b)
        if blk is None:
            if self.fixed is not None:
                blk = np.full(BLOCK, float(self.fixed))
            else:
                blk = sample_pareto(self.tail, self.stream.child(_block_key(b)), BLOCK)
            self._blocks[b] = blk
        return blk

    def tau(self, x: int) -> float:
        b, r = divmod(int(x), BLOCK)
        return float(self._block(b)[r])

    def ensure(self, n_pos: int, n_neg: int) -> None:
        """Make ``pos`` cover sites [0, n_pos) and ``neg`` sites [-n_neg, -1]."""
        if n_pos > self.pos.size:
            nb_ = -(-n_pos // BLOCK)
            self.pos = np.concatenate([self._block(b) for b in range(nb_)])
        if n_neg > self.neg.size:
            nb_ = -(-n_neg // BLOCK)
            # site -(i+1) lives in block -1 - i // BLOCK at offset BLOCK-1 - i % BLOCK
            self.neg = np.concatenate([self._block(-1 - k)[::-1] for k in range(nb_)])

    def sites(self, lo: int, hi: int) -> np.ndarray:
        return np.array([self.tau(x) for x in range(lo, hi)])


@dataclass
class ClockedTrajectory:
    Y: np.ndarray  # Y[0..n]
    S: np.ndarray  # S[0..n], S[0] = 0
    beta: float
    flags: tuple[str, ...] = field(default=())

    @property
    def n_steps(self) -> int:
        return self.Y.size - 1

    def X(self, t):
        """Continuous-time position; t >= 0."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("time must be non-negative")
        idx = np.searchsorted(self.S, t, side="right") - 1
        out = self.Y[idx]
        return out if out.ndim else int(out)


def _p_right(beta: float) -> float:
    if not beta > 1:
        raise ValueError("beta must exceed 1 (directed regime)")
    return 1.0 if math.isinf(beta) else beta / (beta + 1.0)


@nb.njit(cache=True)
def _btm_kernel(tau_pos, tau_neg, p_right, e, ud, st_i, st_f, t_grid, xg, Y, S, max_steps, track):
    """Advance the walk; returns 0 done, 1 need pos sites, 3 need neg sites,
    2 need fresh randomness.  st_i = [pos, n, gi, k, maxpos, maxback]."""
    pos, n, gi, k = st_i[0], st_i[1], st_i[2], st_i[3]
    maxpos, maxback = st_i[4], st_i[5]
    clock = st_f[0]
    ng = t_grid.shape[0]
    code = 0
    while True:
        if n >= max_steps or (ng > 0 and gi >= ng):
            code = 0
            break
        if k >= e.shape[0]:
            code = 2
            break
        if pos >= 0:
            if pos >= tau_pos.shape[0]:
                code = 1
                break
            tau = tau_pos[pos]
        else:
            if -pos - 1 >= tau_neg.shape[0]:
                code = 3
                break
            tau = tau_neg[-pos - 1]
        nxt = clock + tau * e[k]
        while gi < ng and t_grid[gi] < nxt:
            xg[gi] = pos
            gi += 1
        if ud[k] < p_right:
            pos += 1
        else:
            pos -= 1
        clock = nxt
        n += 1
        k += 1
        if track:
            Y[n] = pos
            S[n] = clock
        if pos > maxpos:
            maxpos = pos
        if maxpos - pos > maxback:
            maxback = maxpos - pos
    st_i[0], st_i[1], st_i[2], st_i[3] = pos, n, gi, k
    st_i[4], st_i[5] = maxpos, maxback
    st_f[0] = clock
    return code


def _drive(landscape, beta, stream, *, max_steps, t_grid=None, track=False):
    rng = as_generator(stream)
    p = _p_right(beta)
    t_grid = np.empty(0) if t_grid is None else np.asarray(t_grid, dtype=float)
    if t_grid.size and np.any(np.diff(t_grid) < 0):
        raise ValueError("time grid must be sorted")
    xg = np.zeros(t_grid.size, dtype=np.int64)
    n_alloc = max_steps + 1 if track else 1
    Y = np.zeros(n_alloc, dtype=np.int64)
    S = np.zeros(n_alloc)
    st_i = np.zeros(6, dtype=np.int64)
    st_f = np.zeros(1)
    landscape.ensure(BLOCK, 0 if p == 1.0 else BLOCK)
    e = np.empty(0)
    ud = np.empty(0)
    while True:
        code = _btm_kernel(landscape.pos, landscape.neg, p, e, ud, st_i, st_f, t_grid, xg, Y, S, max_steps, track)
        if code == 0:
            break
        if code == 2:
            e = rng.standard_exponential(CHUNK)
            ud = rng.random(CHUNK) if p < 1.0 else np.zeros(CHUNK)
            st_i[3] = 0
        elif code == 1:
            landscape.ensure(2 * landscape.pos.size, 0)
        else:
            landscape.ensure(0, 2 * max(landscape.neg.size, BLOCK))
    return st_i, st_f, xg, Y, S


def simulate_btm(landscape: TrapLandscape, beta: float, n_steps: int, stream) -> ClockedTrajectory:
    """Full trajectory (Y_0..Y_n, S(0)..S(n))."""
    st_i, st_f, _, Y, S = _drive(landscape, beta, stream, max_steps=int(n_steps), track=True)
    return ClockedTrajectory(Y, S, float(beta))


def observe_btm(landscape: TrapLandscape, beta: float, t_grid, stream, *, max_steps: int = 10**9):
    """X_t on a sorted time grid without storing the trajectory.

    Returns ``(positions, max_backtrack, steps, complete)``."""
    st_i, st_f, xg, _, _ = _drive(landscape, beta, stream, max_steps=max_steps, t_grid=t_grid)
    complete = st_i[2] >= len(t_grid)
    return xg, int(st_i[5]), int(st_i[1]), bool(complete)


def _landscape(alpha, seed, fixed):
    tail = None if fixed is not None else TailSpec(alpha)
    return TrapLandscape(tail, seed, fixed=fixed)


def _observe_replicas(alpha, beta, t_grid, replicas, seed, fixed=None):
    out = np.empty((replicas, len(t_grid)), dtype=np.int64)
    partial = 0
    for r in range(replicas):
        node = seed.child(r)
        xg, _, _, ok = observe_btm(_landscape(alpha, node.child(0), fixed), beta, t_grid, node.child(1))
        partial += not ok
        out[r] = xg
    return out, partial


def scaling_exponent_btm(
    alpha: float,
    beta: float,
    t_grid,
    replicas: int,
    seed: SeedTree,
    *,
    fixed: Optional[float] = None,
    n_boot: int = 1000,
) -> EstimateReport:
    """Slope of ln median X_t against ln t, with a replica bootstrap CI."""
    if fixed is None and not 0 < alpha < 1:
        raise ValueError("tail index must lie in (0, 1)")
    t_grid = np.asarray(t_grid, dtype=float)
    xs, partial = _observe_replicas(alpha, beta, t_grid, replicas, seed, fixed)
    rep = loglog_slope(t_grid, replicas=np.maximum(xs, 0).astype(float) + 0.0, n_boot=n_boot, seed=0)
    flags = list(rep.flags)
    if replicas < MIN_REPLICAS:
        flags.append("few-replicas")
    if partial:
        flags.append(f"partial:{partial}")
    rep.flags = tuple(flags)
    rep.method = "median-loglog-bootstrap"
    rep.seed = seed.key()
    rep.extra["target"] = alpha if fixed is None else 1.0
    return rep


def aging_probability(
    alpha: float,
    beta: float,
    a: float,
    b: float,
    t: float,
    replicas: int,
    seed: SeedTree,
) -> EstimateReport:
    """Fraction of replicas with X_{at} = X_{bt}, reported with the arcsine value."""
    if not (0 < a <= b):
        raise ValueError("need 0 < a <= b")
    if not 0 < alpha < 1:
        raise ValueError("tail index must lie in (0, 1)")
    xs, partial = _observe_replicas(alpha, beta, [a * t, b * t], replicas, seed)
    hits = (xs[:, 0] == xs[:, 1]).astype(float)
    p = float(hits.mean())
    se = math.sqrt(max(p * (1 - p), 1e-300) / replicas)
    target = arcsine_cdf(alpha, a / b) if a < b else 1.0
    return EstimateReport(
        p, se, (p - 1.96 * se, p + 1.96 * se), replicas, "aging-fraction", seed=seed.key(),
        flags=(f"partial:{partial}",) if partial else (), extra={"arcsine": target, "ratio": a / b},
    )


@nb.njit(cache=True)
def _directed_clock(tau, e):
    s = 0.0
    for i in range(tau.shape[0]):
        s += tau[i] * e[i]
    return s


def directed_clocks(alpha: float, n: int, replicas: int, seed: SeedTree, *, fixed: Optional[float] = None):
    """S(n) for the totally directed model, one value per replica."""
    out = np.empty(replicas)
    for r in range(replicas):
        node = seed.child(r)
        land = _landscape(alpha, node.child(0), fixed)
        land.ensure(n, 0)
        e = as_generator(node.child(1)).standard_exponential(n)
        out[r] = _directed_clock(land.pos[:n], e)
    return out


def clock_vs_stable(
    alpha: float,
    n: int,
    replicas: int,
    seed: SeedTree,
    *,
    fixed: Optional[float] = None,
    reference: int | None = None,
) -> dict:
    """KS distance between median-normalised S(n)/n^{1/alpha} and CMS draws."""
    if not 0 < alpha < 1:
        raise ValueError("tail index must lie in (0, 1)")
    s = directed_clocks(alpha, n, replicas, seed.child(0), fixed=fixed) / n ** (1.0 / alpha)
    ref = sample_stable_ca(alpha, seed.child(1), reference or replicas)
    return {
        "ks": ks_two_sample(median_normalize(s), median_normalize(ref)),
        "clock": s,
        "reference": ref,
    }


@nb.njit(cache=True)
def _walk_backtrack(ud, p):
    pos = 0
    mx = 0
    worst = 0
    for k in range(ud.shape[0]):
        pos += 1 if ud[k] < p else -1
        if pos > mx:
            mx = pos
        if mx - pos > worst:
            worst = mx - pos
    return worst


def max_backtrack(beta: float, n: int, replicas: int, seed: SeedTree) -> np.ndarray:
    """max_k (max_{j<=k} Y_j - Y_k) of the embedded walk, per replica."""
    p = _p_right(beta)
    out = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        out[r] = _walk_backtrack(as_generator(seed.child(r)).random(n), p)
    return out
