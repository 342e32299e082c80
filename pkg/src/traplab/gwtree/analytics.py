"""Generating-function analytics of Galton-Watson offspring laws."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..rwre1d import lattice_span

__all__ = [
    "OffspringLaw",
    "GWAnalytics",
    "extinction_prob",
    "critical_bias",
    "harris_split",
    "bud_count_table",
    "alpha_tree",
    "random_bias_alpha",
    "leafless_sigma2",
    "pipe_alpha",
    "BiasLaw",
]

TOL = 1e-12


def _as_pmf(p) -> np.ndarray:
    if isinstance(p, dict):
        kmax = max(int(k) for k in p)
        arr = np.zeros(kmax + 1)
        for k, v in p.items():
            arr[int(k)] = float(v)
        p = arr
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("pmf must be a non-empty 1-d sequence")
    if np.any(arr < 0):
        raise ValueError("pmf entries must be non-negative")
    if abs(arr.sum() - 1.0) > TOL:
        raise ValueError(f"pmf must sum to 1 (got {arr.sum()!r})")
    nz = np.flatnonzero(arr)
    return arr[: nz[-1] + 1].copy()


class OffspringLaw:
    """Finite-support offspring law p_0..p_K."""

    def __init__(self, pmf):
        self.p = _as_pmf(pmf)
        self.p.setflags(write=False)
        k = np.arange(self.p.size)
        self.mean = float(k @ self.p)
        self.second_moment = float((k * k) @ self.p)
        self.variance = self.second_moment - self.mean**2

    @property
    def kmax(self) -> int:
        return self.p.size - 1

    @property
    def supercritical(self) -> bool:
        return self.mean > 1.0

    @property
    def has_leaves(self) -> bool:
        return self.p[0] > 0

    def f(self, s):
        return np.polynomial.polynomial.polyval(s, self.p)

    def fprime(self, s):
        return np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(self.p))

    def as_dict(self) -> dict[int, float]:
        return {k: float(v) for k, v in enumerate(self.p) if v > 0}

    def __repr__(self):
        return f"OffspringLaw({self.as_dict()})"

    def __eq__(self, other):
        return isinstance(other, OffspringLaw) and np.array_equal(self.p, other.p)

    def __hash__(self):
        return hash(self.p.tobytes())


def extinction_prob(law: OffspringLaw) -> float:
    """Smallest fixed point of f in [0, 1]: monotone iteration from 0, then
    Newton polish.  Non-supercritical laws return 1 with a warning."""
    if not law.supercritical:
        warnings.warn("law is not supercritical: extinction is certain", RuntimeWarning, stacklevel=2)
        return 1.0
    if not law.has_leaves:
        return 0.0
    q = 0.0
    for _ in range(100000):
        nq = float(law.f(q))
        if abs(nq - q) < TOL:
            q = nq
            break
        q = nq
    for _ in range(3):
        d = float(law.fprime(q)) - 1.0
        if d == 0:
            break
        step = (float(law.f(q)) - q) / d
        if abs(step) > 1e-6:
            break
        q -= step
    return q


def critical_bias(law: OffspringLaw) -> Optional[float]:
    if not law.supercritical:
        raise ValueError("critical bias needs a supercritical law")
    if not law.has_leaves:
        return None
    return 1.0 / float(law.fprime(extinction_prob(law)))


def harris_split(law: OffspringLaw):
    """(g, h) coefficient arrays; h is None without leaves."""
    if not law.supercritical:
        raise ValueError("Harris decomposition needs a supercritical law")
    if not law.has_leaves:
        return law.p.copy(), None
    q = extinction_prob(law)
    K = law.kmax
    g = np.zeros(K + 1)
    # f((1-q)s + q) = sum_k p_k sum_j C(k,j) (1-q)^j q^(k-j) s^j
    for k, pk in enumerate(law.p):
        if pk == 0:
            continue
        for j in range(k + 1):
            g[j] += pk * math.comb(k, j) * (1 - q) ** j * q ** (k - j)
    g[0] -= q
    g /= 1 - q
    g[0] = 0.0
    h = law.p * q ** np.arange(K + 1) / q
    return g, h


def bud_count_table(law: OffspringLaw) -> np.ndarray:
    """``T[d, j] = P[N = j | backbone degree d]`` where N counts trap children,
    proportional to p_{d+j} C(d+j, d) (1-q)^d q^j."""
    q = extinction_prob(law)
    K = law.kmax
    T = np.zeros((K + 1, K + 1))
    for d in range(1, K + 1):
        for j in range(0, K - d + 1):
            T[d, j] = law.p[d + j] * math.comb(d + j, d) * (1 - q) ** d * q**j
        s = T[d].sum()
        if s > 0:
            T[d] /= s
    return T


def alpha_tree(law: OffspringLaw, beta: float) -> float:
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    bc = critical_bias(law)
    if bc is None:
        raise ValueError("leafless law has no trapping exponent")
    return math.log(bc) / math.log(beta)


@dataclass(frozen=True)
class BiasLaw:
    """Finite-atom law of the per-edge coefficient A."""

    atoms: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if a.shape != p.shape or a.size == 0:
            raise ValueError("atoms and probabilities must match")
        if np.any(a <= 0) or not np.all(np.isfinite(a)):
            raise ValueError("atoms must be positive and finite")
        if np.any(p < 0) or abs(p.sum() - 1) > TOL:
            raise ValueError("probabilities must sum to 1")
        object.__setattr__(self, "atoms", tuple(float(x) for x in a))
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    def moment(self, t: float) -> float:
        return float(np.dot(self.probs, np.exp(t * np.log(self.atoms))))

    def lattice(self) -> Optional[float]:
        return lattice_span(np.log(self.atoms))


def _bisect(f, lo, hi, tol=1e-13):
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def random_bias_alpha(law: OffspringLaw, nu: BiasLaw) -> tuple[float, Optional[float]]:
    """Root of E[A^alpha] = 1/f'(q) for atoms of A in (1, inf); returns
    ``(alpha, lattice span of ln A or None)``."""
    if min(nu.atoms) <= 1:
        raise ValueError("bias atoms must exceed 1")
    bc = critical_bias(law)
    if bc is None:
        raise ValueError("need a law with leaves")
    f = lambda t: nu.moment(t) - bc
    hi = 1.0
    while f(hi) < 0:
        hi *= 2
    return _bisect(f, 0.0, hi), nu.lattice()


def leafless_sigma2(law: OffspringLaw) -> float:
    if law.has_leaves:
        raise ValueError("variance formula holds for leafless laws only")
    if not law.supercritical:
        raise ValueError("need m > 1")
    m = law.mean
    return m * m * (m - 1) / (law.second_moment - m)


def pipe_alpha(law: OffspringLaw, A: BiasLaw) -> tuple[float, float, float]:
    """Lebesgue measures of {t >= 0 : E[A^t] <= 1/p1} and {t <= 0 : ...}."""
    p1 = law.p[1] if law.kmax >= 1 else 0.0
    if p1 == 0:
        return math.inf, math.inf, math.inf
    target = 1.0 / p1
    f = lambda t: A.moment(t) - target
    # E[A^0] = 1 <= 1/p1, so t = 0 is in the (convex) sublevel set
    out = []
    for sgn in (1.0, -1.0):
        g = lambda t: f(sgn * t)
        hi = 1.0
        while g(hi) <= 0:
            hi *= 2
            if hi > 1e6:
                hi = math.inf
                break
        out.append(math.inf if math.isinf(hi) else _bisect(g, 0.0, hi))
    a1, a2 = out
    return a1, a2, a1 + a2


@dataclass(frozen=True)
class GWAnalytics:
    law: OffspringLaw
    q: float
    fprime_q: float
    beta_c: Optional[float]
    g: np.ndarray
    h: Optional[np.ndarray]
    sigma2: Optional[float]

    @classmethod
    def of(cls, law: OffspringLaw) -> "GWAnalytics":
        q = extinction_prob(law)
        g, h = harris_split(law)
        return cls(
            law, q, float(law.fprime(q)), critical_bias(law), g, h,
            None if law.has_leaves else leafless_sigma2(law),
        )

    def alpha(self, beta: float) -> Optional[float]:
        return alpha_tree(self.law, beta) if self.beta_c else None
