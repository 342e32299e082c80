"""Reproducible randomness and heavy-tail analytics.

Streams are addressed by a :class:`SeedTree` (root seed + child path) and
materialised as counter-based Philox generators, so a replica's draws depend
only on its path and never on scheduling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import special

__all__ = [
    "TailSpec",
    "StableParams",
    "SeedTree",
    "as_generator",
    "pareto_inverse_cdf",
    "sample_pareto",
    "sample_stable",
    "sample_stable_ca",
    "normalizing_sequences",
    "arcsine_cdf",
]


@dataclass(frozen=True)
class TailSpec:
    """Exact Pareto law with survival ``(x/scale)**-alpha`` for ``x >= scale``."""

    alpha: float
    scale: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"tail index must be positive, got {self.alpha}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < self.scale, 1.0, (np.maximum(x, self.scale) / self.scale) ** -self.alpha)


@dataclass(frozen=True)
class StableParams:
    """Parameters of the characteristic function

    ``exp(i t c - b |t|^alpha (1 + i kappa sgn(t) w_alpha(t)))`` with
    ``w_alpha(t) = -tan(pi alpha / 2)`` for ``alpha != 1`` and
    ``(2/pi) log|t|`` for ``alpha == 1``.
    """

    alpha: float
    kappa: float = 1.0
    b: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 2:
            raise ValueError(f"stability index must lie in (0, 2], got {self.alpha}")
        if abs(self.kappa) > 1:
            raise ValueError(f"skewness must lie in [-1, 1], got {self.kappa}")
        if self.b < 0:
            raise ValueError("scale b must be non-negative")

    @property
    def completely_asymmetric(self) -> bool:
        return abs(self.kappa) == 1.0


@dataclass(frozen=True)
class SeedTree:
    """Deterministic stream address: ``root`` seed plus a path of child indices."""

    root: int
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.root) < 2**64:
            raise ValueError("root seed must fit in 64 unsigned bits")
        object.__setattr__(self, "path", tuple(int(i) for i in self.path))
        if any(i < 0 for i in self.path):
            raise ValueError("path entries must be non-negative")

    def child(self, *idx: int) -> "SeedTree":
        return SeedTree(self.root, self.path + tuple(idx))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=int(self.root), spawn_key=self.path)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))

    def key(self) -> str:
        return "/".join([str(self.root), *map(str, self.path)])


Stream = Union[SeedTree, np.random.Generator]


def as_generator(stream: Stream) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, SeedTree):
        return stream.generator()
    raise TypeError(f"expected SeedTree or numpy Generator, got {type(stream).__name__}")


def pareto_inverse_cdf(spec: TailSpec, u):
    """Map ``u`` in (0, 1] to the Pareto quantile ``scale * u**(-1/alpha)``."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u > 1)):
        raise ValueError("u must lie in (0, 1]")
    out = spec.scale * u ** (-1.0 / spec.alpha)
    return out if out.ndim else float(out)


def sample_pareto(spec: TailSpec, stream: Stream, size=None):
    rng = as_generator(stream)
    # 1 - U lies in (0, 1]
    u = 1.0 - rng.random(size)
    return pareto_inverse_cdf(spec, u)


def _cms_standard(alpha: float, kappa: float, v, w):
    """Chambers-Mallows-Stuck transform to S(alpha, kappa, 1, 0) in the
    ``1 - i kappa sgn(t) tan(pi alpha/2)`` convention."""
    if alpha == 1.0:
        half_pi = 0.5 * np.pi
        a = half_pi + kappa * v
        return (2.0 / np.pi) * (a * np.tan(v) - kappa * np.log(half_pi * w * np.cos(v) / a))
    t = kappa * math.tan(0.5 * np.pi * alpha)
    shift = math.atan(t) / alpha
    scale = (1.0 + t * t) ** (1.0 / (2.0 * alpha))
    av = alpha * (v + shift)
    return (
        scale
        * np.sin(av)
        / np.cos(v) ** (1.0 / alpha)
        * (np.cos(v - av) / w) ** ((1.0 - alpha) / alpha)
    )


def sample_stable(params: StableParams, stream: Stream, size=None):
    rng = as_generator(stream)
    v = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size)
    w = rng.standard_exponential(size)
    x = _cms_standard(params.alpha, params.kappa, v, w)
    sigma = params.b ** (1.0 / params.alpha)
    if params.alpha == 1.0:
        x = sigma * x + (2.0 / np.pi) * params.kappa * sigma * math.log(sigma) if sigma > 0 else 0.0 * x
        return x + params.c
    return sigma * x + params.c


def sample_stable_ca(alpha: float, stream: Stream, size=None):
    """Completely asymmetric (kappa = 1) alpha-stable draws, b = 1, c = 0.

    For ``alpha < 1`` the law lives on (0, inf); ``alpha = 2`` is N(0, 2).
    """
    if not 0 < alpha <= 2:
        raise ValueError(f"stability index must lie in (0, 2], got {alpha}")
    x = sample_stable(StableParams(alpha, 1.0, 1.0, 0.0), stream, size)
    if alpha < 1:
        # float underflow can produce exact zeros at extreme angles
        x = np.maximum(x, np.finfo(float).tiny)
    return x


def normalizing_sequences(spec: TailSpec, n: int, *, zero_center_below_one: bool = True):
    """``(a_n, b_n)`` with ``a_n = inf{x : P[X > x] <= 1/n}`` and
    ``b_n = n E[X; X <= a_n]`` for the exact Pareto law.

    With ``alpha < 1`` no centering is needed and ``b_n = 0`` is returned
    unless ``zero_center_below_one`` is False.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    alpha, x0 = spec.alpha, spec.scale
    a_n = x0 * n ** (1.0 / alpha)
    if alpha < 1 and zero_center_below_one:
        return a_n, 0.0
    ratio = a_n / x0
    if alpha == 1:
        b_n = n * x0 * math.log(ratio)
    else:
        b_n = n * alpha * x0 / (1.0 - alpha) * (ratio ** (1.0 - alpha) - 1.0)
    return a_n, b_n


def arcsine_cdf(alpha: float, x):
    """Generalised arcsine law: ``sin(pi a)/pi * int_0^x y^(a-1) (1-y)^(-a) dy``.

    Equal to the regularised incomplete beta ``I_x(alpha, 1 - alpha)``.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0) | (xa > 1)) or np.any(np.isnan(xa)):
        raise ValueError("x must lie in [0, 1]")
    out = special.betainc(alpha, 1.0 - alpha, xa)
    return out if out.ndim else float(out)
