"""Shared estimators: tail index, KS distance, log-log slopes, bootstrap."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "EstimateReport",
    "hill_tail_index",
    "hill_sensitivity",
    "ks_two_sample",
    "loglog_slope",
    "bootstrap_ci",
    "mean_report",
    "median_normalize",
]

DEFAULT_BOOT = 1000
HILL_FRACTIONS = (0.005, 0.01, 0.02)


@dataclass
class EstimateReport:
    estimate: float
    stderr: float
    ci: tuple[float, float]
    n: int
    method: str
    seed: Optional[str] = None
    flags: tuple[str, ...] = field(default=())
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("replica count must be positive")
        lo, hi = float(self.ci[0]), float(self.ci[1])
        # percentile intervals of skewed statistics can miss the plug-in value
        self.ci = (min(lo, self.estimate), max(hi, self.estimate))

    def contains(self, value: float) -> bool:
        return self.ci[0] <= value <= self.ci[1]

    def overlaps(self, other: "EstimateReport") -> bool:
        return self.ci[0] <= other.ci[1] and other.ci[0] <= self.ci[1]

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "n": self.n,
            "method": self.method,
            "seed": self.seed,
            "flags": list(self.flags),
            **self.extra,
        }


def hill_tail_index(samples, k_fraction: float = 0.01, *, k: Optional[int] = None) -> EstimateReport:
    """Hill estimator of the tail index over the ``k`` largest order statistics."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 500:
        raise ValueError(f"need at least 500 samples, got {n}")
    if k is None:
        if not 0 < k_fraction <= 0.2:
            raise ValueError("k_fraction must lie in (0, 0.2]")
        k = max(2, int(round(k_fraction * n)))
    if not 2 <= k < n:
        raise ValueError("k out of range")
    if np.any(x <= 0):
        raise ValueError("Hill estimator needs positive samples")
    top = np.partition(x, n - k - 1)[n - k - 1 :]
    threshold = top.min()
    tail = np.sort(top)[1:]
    flags = []
    if tail[-1] == threshold:
        raise ValueError("top order statistics are all tied; tail index undefined")
    if np.unique(tail).size < tail.size:
        flags.append("ties")
    h = np.mean(np.log(tail / threshold))
    alpha = 1.0 / h
    se = alpha / math.sqrt(k)
    return EstimateReport(alpha, se, (alpha - 1.96 * se, alpha + 1.96 * se), n, f"hill(k={k})", flags=tuple(flags))


def hill_sensitivity(samples, fractions: Sequence[float] = HILL_FRACTIONS) -> dict[float, EstimateReport]:
    return {f: hill_tail_index(samples, f) for f in fractions}


def ks_two_sample(a, b) -> float:
    """Sup distance between the empirical CDFs of ``a`` and ``b``."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def median_normalize(x):
    """Divide by the sample median (shape comparison with unknown scale)."""
    x = np.asarray(x, dtype=float)
    med = np.median(x)
    if med == 0:
        raise ValueError("zero median; cannot normalise")
    return x / med


def bootstrap_ci(
    samples,
    statistic: Callable = np.mean,
    *,
    n_boot: int = DEFAULT_BOOT,
    level: float = 0.95,
    seed: int = 0,
) -> EstimateReport:
    """Percentile bootstrap over the first axis of ``samples``."""
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty sample")
    rng = np.random.default_rng(seed)
    est = float(statistic(x))
    idx = rng.integers(0, n, size=(n_boot, n))
    boots = np.array([statistic(x[i]) for i in idx], dtype=float)
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return EstimateReport(est, float(boots.std(ddof=1)), (float(lo), float(hi)), n, "bootstrap", seed=str(seed))


def mean_report(samples, *, level: float = 0.95, method: str = "mean") -> EstimateReport:
    """Sample mean with a normal-theory interval."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    from scipy.stats import norm

    z = norm.ppf(0.5 + level / 2)
    return EstimateReport(m, se, (m - z * se, m + z * se), n, method)


def _wls(lx, ly, w):
    w = w / w.sum()
    mx, my = np.dot(w, lx), np.dot(w, ly)
    sxx = np.dot(w, (lx - mx) ** 2)
    if sxx == 0:
        raise ValueError("grid must contain at least two distinct points")
    slope = np.dot(w, (lx - mx) * (ly - my)) / sxx
    return slope, my - slope * mx


def loglog_slope(
    grid,
    values=None,
    weights=None,
    *,
    replicas=None,
    statistic: Callable = np.median,
    n_boot: int = DEFAULT_BOOT,
    seed: int = 0,
) -> EstimateReport:
    """Weighted least-squares slope of ``ln value`` against ``ln grid``.

    Pass either ``values`` (one per grid point) or ``replicas`` with shape
    ``(R, len(grid))``; in the latter case ``statistic`` is applied per grid
    point and the CI comes from resampling replicas.
    """
    g = np.asarray(grid, dtype=float)
    if g.size < 3:
        raise ValueError("need at least 3 grid points")
    if np.any(g <= 0):
        raise ValueError("grid must be positive")
    w = np.ones_like(g) if weights is None else np.asarray(weights, dtype=float)
    lx = np.log(g)

    if replicas is None:
        v = np.asarray(values, dtype=float)
        if v.shape != g.shape:
            raise ValueError("values must match grid")
        if np.any(v <= 0):
            raise ValueError("values must be positive")
        ly = np.log(v)
        slope, icpt = _wls(lx, ly, w)
        resid = ly - (icpt + slope * lx)
        dof = g.size - 2
        sxx = np.sum((lx - lx.mean()) ** 2)
        se = math.sqrt(np.sum(resid**2) / dof / sxx) if dof > 0 else 0.0
        return EstimateReport(
            float(slope), se, (slope - 1.96 * se, slope + 1.96 * se), g.size, "loglog-wls",
            extra={"intercept": float(icpt)},
        )

    r = np.asarray(replicas, dtype=float)
    if r.ndim != 2 or r.shape[1] != g.size:
        raise ValueError("replicas must have shape (R, len(grid))")
    stat = statistic(r, axis=0)
    if np.any(stat <= 0):
        raise ValueError("statistic of replicas must be positive")
    slope, icpt = _wls(lx, np.log(stat), w)
    rng = np.random.default_rng(seed)
    R = r.shape[0]
    boots = np.empty(n_boot)
    for i in range(n_boot):
        s = statistic(r[rng.integers(0, R, R)], axis=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            boots[i] = _wls(lx, np.log(np.maximum(s, np.finfo(float).tiny)), w)[0]
    lo, hi = np.quantile(boots, [0.025, 0.975])
    return EstimateReport(
        float(slope), float(boots.std(ddof=1)), (float(lo), float(hi)), R, "loglog-bootstrap",
        seed=str(seed), extra={"intercept": float(icpt)},
    )
