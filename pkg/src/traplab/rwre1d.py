"""Nearest-neighbour random walk in an i.i.d. random environment on Z.

At site x the walk steps right with probability omega_x.  With
rho_x = (1 - omega_x)/omega_x the potential is V(0) = 0,
V(x) - V(x-1) = ln rho_x, and exp(-V(x)) + exp(-V(x-1)) is reversible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numba as nb
import numpy as np

from .estat import EstimateReport, loglog_slope, mean_report
from .randkit import SeedTree, arcsine_cdf, as_generator

__all__ = [
    "SiteLaw",
    "Env1D",
    "Regime",
    "classify_regime",
    "kks_alpha",
    "lattice_span",
    "simulate_rwre",
    "RWREWalkRecord",
    "rwre_speed",
    "hitting_time_exponent",
    "potential_valleys",
    "Valley",
    "valley_heights",
    "aging_rwre",
]

BLOCK = 4096
CHUNK = 1 << 16
STEP_CAP = 10**9
ZERO_TOL = 1e-12


def lattice_span(values: Sequence[float], tol: float = 1e-9, max_den: int = 1000) -> Optional[float]:
    """Largest h with every value in hZ (up to ``tol``), or None if the values
    generate a dense subgroup (ratios irrational to denominator ``max_den``).

    Sums of such values, e.g. the potential and its valley heights, then also
    live on hZ."""
    v = np.asarray(values, dtype=float)
    v = v[np.abs(v) > tol]
    if v.size == 0:
        return 0.0
    ref = v[0]
    fracs = []
    for x in v:
        f = Fraction(x / ref).limit_denominator(max_den)
        if abs(float(f) * ref - x) > tol * max(1.0, abs(x)):
            return None
        fracs.append(f)
    den = math.lcm(*[f.denominator for f in fracs])
    num = math.gcd(*[int(f * den) for f in fracs])
    return abs(ref) * num / den


@dataclass(frozen=True)
class SiteLaw:
    """Finite-atom law of omega_0 on (0, 1)."""

    omega: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if w.shape != p.shape or w.size == 0:
            raise ValueError("need matching non-empty atoms and probabilities")
        if np.any((w <= 0) | (w >= 1)):
            raise ValueError("atoms must lie in (0, 1)")
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "omega", tuple(float(x) for x in w))
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @classmethod
    def from_rho(cls, rho, probs) -> "SiteLaw":
        rho = np.asarray(rho, dtype=float)
        if np.any(rho <= 0):
            raise ValueError("rho atoms must be positive")
        return cls(tuple(1.0 / (1.0 + rho)), tuple(probs))

    @classmethod
    def constant(cls, omega: float) -> "SiteLaw":
        return cls((omega,), (1.0,))

    @property
    def rho(self) -> np.ndarray:
        w = np.asarray(self.omega)
        return (1.0 - w) / w

    @property
    def log_rho(self) -> np.ndarray:
        w = np.asarray(self.omega)
        return np.log1p(-w) - np.log(w)

    def mean_log_rho(self) -> float:
        return float(np.dot(self.probs, self.log_rho))

    def rho_moment(self, t: float) -> float:
        return float(np.dot(self.probs, np.exp(t * self.log_rho)))

    def lattice(self) -> Optional[float]:
        return lattice_span(self.log_rho)

    def mirrored(self) -> "SiteLaw":
        return SiteLaw(tuple(1.0 - w for w in self.omega), self.probs)


@dataclass(frozen=True)
class Regime:
    kind: str  # recurrent | transient-zero-speed | ballistic
    direction: int  # +1, -1, 0
    speed: float

    def __str__(self):
        return self.kind


def classify_regime(law: SiteLaw) -> Regime:
    m = law.mean_log_rho()
    if abs(m) <= ZERO_TOL:
        return Regime("recurrent", 0, 0.0)
    if m > 0:
        r = classify_regime(law.mirrored())
        return Regime(r.kind, -1, -r.speed)
    e = law.rho_moment(1.0)
    if e >= 1.0:
        return Regime("transient-zero-speed", 1, 0.0)
    return Regime("ballistic", 1, (1.0 - e) / (1.0 + e))


def kks_alpha(law: SiteLaw, tol: float = 1e-12) -> Optional[float]:
    """Positive root of E[rho^t] = 1; None when every rho atom is <= 1."""
    if law.mean_log_rho() >= -ZERO_TOL:
        raise ValueError("need E[ln rho] < 0")
    w = np.asarray(law.probs)
    lr = law.log_rho
    if not np.any((lr > 0) & (w > 0)):
        return None
    f = lambda t: law.rho_moment(t) - 1.0
    lo, hi = 0.0, 1.0
    while f(hi) < 0:
        lo, hi = hi, 2 * hi
    # f < 0 on (0, root) by convexity and f'(0) = E ln rho < 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class Env1D:
    """Lazily extended two-sided environment; omega_x depends only on
    (stream, x) through per-block child streams."""

    def __init__(self, law: SiteLaw, stream: SeedTree):
        self.law = law
        self.stream = stream
        self._blocks: dict[int, np.ndarray] = {}
        self._cum = np.cumsum(law.probs)
        self._cum[-1] = 1.0
        self._atoms = np.asarray(law.omega)
        self.pos = np.empty(0)  # omega at 0, 1, 2, ...
        self.neg = np.empty(0)  # omega at -1, -2, ...

    def _block(self, b: int) -> np.ndarray:
        blk = self._blocks.get(b)
        if blk is None:
            key = 2 * b if b >= 0 else -2 * b - 1
            u = self.stream.child(key).generator().random(BLOCK)
            blk = self._atoms[np.searchsorted(self._cum, u, side="right")]
            self._blocks[b] = blk
        return blk

    def omega(self, x: int) -> float:
        b, r = divmod(int(x), BLOCK)
        return float(self._block(b)[r])

    def omegas(self, lo: int, hi: int) -> np.ndarray:
        """omega_x for x in [lo, hi)."""
        b0, b1 = lo // BLOCK, (hi - 1) // BLOCK
        arr = np.concatenate([self._block(b) for b in range(b0, b1 + 1)])
        return arr[lo - b0 * BLOCK : hi - b0 * BLOCK]

    def rho(self, lo: int, hi: int) -> np.ndarray:
        w = self.omegas(lo, hi)
        return (1.0 - w) / w

    def potential(self, lo: int, hi: int) -> np.ndarray:
        """V(x) for x in [lo, hi]; requires lo <= 0 <= hi or shifts accordingly."""
        # V(x) = sum_{i=1}^{x} ln rho_i, V(x) = -sum_{i=x+1}^{0} ln rho_i for x < 0
        a, b = min(lo, 0), max(hi, 0)
        w = self.omegas(a + 1, b + 1)
        steps = np.log1p(-w) - np.log(w)
        v = np.concatenate([[0.0], np.cumsum(steps)])  # V(a) .. V(b) relative to V(a)
        v -= v[-a]  # V(0) = 0
        return v[lo - a : hi - a + 1]

    def ensure(self, n_pos: int, n_neg: int) -> None:
        if n_pos > self.pos.size:
            self.pos = self.omegas(0, -(-n_pos // BLOCK) * BLOCK)
        if n_neg > self.neg.size:
            m = -(-n_neg // BLOCK) * BLOCK
            self.neg = self.omegas(-m, 0)[::-1].copy()


@dataclass
class RWREWalkRecord:
    delta: np.ndarray  # delta[k-1] = first hitting time of level k, -1 if not reached
    steps: int
    final: int
    observed: np.ndarray  # X at the requested step counts
    partial: bool
    flags: tuple[str, ...] = field(default=())


@nb.njit(cache=True)
def _rwre_kernel(om_pos, om_neg, u, st, delta, obs_steps, xobs, max_steps, stop_at_level):
    """st = [pos, n, next_level, k, obs_index]; codes: 0 done, 1 need pos,
    2 need uniforms, 3 need neg."""
    pos, n, lvl, k, oi = st[0], st[1], st[2], st[3], st[4]
    nl = delta.shape[0]
    no = obs_steps.shape[0]
    code = 0
    while True:
        while oi < no and obs_steps[oi] == n:
            xobs[oi] = pos
            oi += 1
        if n >= max_steps or (stop_at_level and lvl > nl):
            code = 0
            break
        if k >= u.shape[0]:
            code = 2
            break
        if pos >= 0:
            if pos >= om_pos.shape[0]:
                code = 1
                break
            w = om_pos[pos]
        else:
            if -pos - 1 >= om_neg.shape[0]:
                code = 3
                break
            w = om_neg[-pos - 1]
        if u[k] < w:
            pos += 1
        else:
            pos -= 1
        k += 1
        n += 1
        if pos == lvl:
            if lvl <= nl:
                delta[lvl - 1] = n
            lvl += 1
    st[0], st[1], st[2], st[3], st[4] = pos, n, lvl, k, oi
    return code


def simulate_rwre(
    env: Env1D,
    n_levels: int,
    stream,
    *,
    max_steps: int = STEP_CAP,
    obs_steps=None,
    stop_at_level: bool = True,
) -> RWREWalkRecord:
    """Walk from 0 recording Delta_1..Delta_n; stops at level n or ``max_steps``."""
    rng = as_generator(stream)
    obs = np.empty(0, dtype=np.int64) if obs_steps is None else np.asarray(obs_steps, dtype=np.int64)
    if obs.size and np.any(np.diff(obs) < 0):
        raise ValueError("observation steps must be sorted")
    max_steps = min(int(max_steps), STEP_CAP)
    delta = -np.ones(int(n_levels), dtype=np.int64)
    xobs = np.zeros(obs.size, dtype=np.int64)
    st = np.array([0, 0, 1, 0, 0], dtype=np.int64)
    env.ensure(max(BLOCK, n_levels + 1), BLOCK)
    u = np.empty(0)
    while True:
        code = _rwre_kernel(env.pos, env.neg, u, st, delta, obs, xobs, max_steps, stop_at_level)
        if code == 0:
            break
        if code == 2:
            u = rng.random(CHUNK)
            st[3] = 0
        elif code == 1:
            env.ensure(2 * env.pos.size, 0)
        else:
            env.ensure(0, 2 * env.neg.size)
    partial = bool(stop_at_level and n_levels > 0 and delta[-1] < 0)
    return RWREWalkRecord(delta, int(st[1]), int(st[0]), xobs, partial, ("partial",) if partial else ())


def rwre_speed(law: SiteLaw, n_steps: int, environments: int, seed: SeedTree) -> EstimateReport:
    """Mean of X_n / n over independent environments (one walk each)."""
    v = np.empty(environments)
    for r in range(environments):
        env = Env1D(law, seed.child(r, 0))
        rec = simulate_rwre(env, 0, seed.child(r, 1), max_steps=n_steps, stop_at_level=False)
        v[r] = rec.final / n_steps
    rep = mean_report(v, method="speed")
    rep.seed = seed.key()
    rep.extra["target"] = classify_regime(law).speed
    return rep


def hitting_time_exponent(law: SiteLaw, level_grid, replicas: int, seed: SeedTree, *, n_boot: int = 1000) -> EstimateReport:
    """Slope of ln median Delta_n against ln n."""
    grid = np.asarray(level_grid, dtype=np.int64)
    top = int(grid.max())
    rows, partial = [], 0
    for r in range(replicas):
        env = Env1D(law, seed.child(r, 0))
        rec = simulate_rwre(env, top, seed.child(r, 1))
        if rec.partial:
            partial += 1
            continue
        rows.append(rec.delta[grid - 1])
    rep = loglog_slope(grid, replicas=np.array(rows, dtype=float), n_boot=n_boot, seed=0)
    span = law.lattice()
    flags = []
    if span is not None:
        flags.append("lattice")
    if partial:
        flags.append(f"partial:{partial}")
    rep.flags = tuple(flags)
    alpha = kks_alpha(law) if law.mean_log_rho() < 0 else None
    rep.extra["target"] = 1.0 / alpha if alpha else None
    return rep


@dataclass(frozen=True)
class Valley:
    start: int
    end: int  # first site where V drops below the valley floor
    height: float


@nb.njit(cache=True)
def _excursions(v):
    n = v.shape[0]
    starts = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.int64)
    heights = np.empty(n)
    m = 0
    floor = v[0]
    top = v[0]
    s = 0
    for x in range(1, n):
        if v[x] < floor:
            starts[m] = s
            ends[m] = x
            heights[m] = top - floor
            m += 1
            floor = v[x]
            top = v[x]
            s = x
        elif v[x] > top:
            top = v[x]
    return starts[:m], ends[:m], heights[:m]


def potential_valleys(env: Env1D, window) -> list[Valley]:
    """Excursions of V above its running minimum on ``window``.

    ``window`` is ``(lo, hi)`` or a length starting at site 0.  Each excursion
    starts at a new strict minimum and ends at the next one; its height is the
    climb from the floor to the excursion maximum.  The final, unfinished
    excursion is dropped."""
    lo, hi = (0, int(window)) if np.isscalar(window) else (int(window[0]), int(window[1]))
    if hi <= lo:
        return []
    v = env.potential(lo, hi - 1)
    s, e, h = _excursions(v)
    return [Valley(int(a) + lo, int(b) + lo, float(c)) for a, b, c in zip(s, e, h)]


def valley_heights(env: Env1D, window) -> np.ndarray:
    lo, hi = (0, int(window)) if np.isscalar(window) else (int(window[0]), int(window[1]))
    if hi <= lo:
        return np.empty(0)
    return _excursions(env.potential(lo, hi - 1))[2]


def aging_rwre(
    law: SiteLaw,
    h: float,
    t: int,
    eta: float,
    replicas: int,
    seed: SeedTree,
) -> EstimateReport:
    """Fraction of replicas with |X_{th} - X_t| <= eta ln t."""
    if h < 1 or eta <= 0:
        raise ValueError("need h >= 1 and eta > 0")
    alpha = kks_alpha(law)
    if alpha is None or not 0 < alpha < 1:
        raise ValueError("aging needs the KKS exponent in (0, 1)")
    t_end = int(round(t * h))
    hits = np.empty(replicas)
    for r in range(replicas):
        env = Env1D(law, seed.child(r, 0))
        rec = simulate_rwre(env, 0, seed.child(r, 1), max_steps=t_end, obs_steps=[t, t_end], stop_at_level=False)
        hits[r] = abs(rec.observed[1] - rec.observed[0]) <= eta * math.log(t)
    p = float(hits.mean())
    se = math.sqrt(max(p * (1 - p), 1e-300) / replicas)
    target = arcsine_cdf(alpha, 1.0 / h) if h > 1 else 1.0
    flags = ("lattice",) if law.lattice() is not None else ()
    return EstimateReport(
        p, se, (p - 1.96 * se, p + 1.96 * se), replicas, "rwre-aging", seed=seed.key(), flags=flags,
        extra={"arcsine": target, "alpha": alpha},
    )
