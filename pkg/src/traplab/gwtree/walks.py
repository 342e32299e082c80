"""Biased walks on Galton-Watson trees: simulation and derived estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..estat import EstimateReport, bootstrap_ci, ks_two_sample, loglog_slope, mean_report, median_normalize
from ..randkit import SeedTree, as_generator, sample_stable_ca
from .analytics import BiasLaw, OffspringLaw, _as_pmf, critical_bias, extinction_prob, harris_split, random_bias_alpha
from .arena import CHUNK, NODE_CAP, ROOT, BiasSpec, TreeArena, _walk

__all__ = [
    "TreeWalkRecord",
    "simulate_tree_walk",
    "escape_probability",
    "transition_probs",
    "tree_speed",
    "speed_curve",
    "hitting_exponent",
    "aidekon_speed",
    "trap_height_tail",
    "lattice_diagnostic",
]

STEP_CAP = 10**9
BURN_IN = 0.1


@dataclass
class TreeWalkRecord:
    delta: np.ndarray  # first hitting time of depth k (k = 1..), -1 if unreached
    steps: int
    final_depth: int
    observed: np.ndarray  # |X| at requested steps
    root_visits: int
    nodes: int
    partial: bool
    flags: tuple[str, ...] = field(default=())
    observed_nodes: Optional[np.ndarray] = None  # node ids at the requested steps
    final_node: int = ROOT


def _run(arena: TreeArena, bias: BiasSpec, stream, *, max_steps=STEP_CAP, n_levels=0, obs_steps=None,
         stop_depth=0, absorb_parent=False, trials=0, root_uniform=None, start=ROOT):
    rng = as_generator(stream)
    if bias.random and not arena.random_bias:
        raise ValueError("random bias needs an arena built with bias_law")
    beta = 1.0 if bias.random else float(bias.beta)
    if root_uniform is None:
        root_uniform = not bias.random
    obs = np.empty(0, dtype=np.int64) if obs_steps is None else np.asarray(obs_steps, dtype=np.int64)
    delta = -np.ones(int(n_levels), dtype=np.int64)
    obs_depth = np.zeros(obs.size, dtype=np.int64)
    obs_node = np.zeros(obs.size, dtype=np.int64)
    st = np.array([start, 0, int(arena.depth[start]) + 1, 0, arena.kt, arena.n_nodes, 0, 0, 0, 0], dtype=np.int64)
    wu = np.empty(0)
    overflow = False
    while True:
        st[4], st[5] = arena.kt, arena.n_nodes
        code = _walk(st, wu, arena.tu, *arena.args(), beta, root_uniform, int(max_steps), delta, obs, obs_depth,
                     obs_node, int(stop_depth), absorb_parent, int(trials))
        arena.kt, arena.n_nodes = int(st[4]), int(st[5])
        if code == 0:
            break
        if code == 1:
            wu = rng.random(int(min(CHUNK, max(1024, max_steps - st[1] + 1))))
            st[3] = 0
        elif code == 2:
            arena.refill()
        elif not arena.grow():
            overflow = True
            break
    return st, delta, obs_depth, obs_node, overflow


def simulate_tree_walk(
    tree: TreeArena,
    bias: BiasSpec,
    budget: int,
    stream,
    *,
    n_levels: int = 0,
    obs_steps=None,
    start: int = ROOT,
) -> TreeWalkRecord:
    """Walk from ``start`` (default the root) for ``budget`` steps or until
    depth ``n_levels``."""
    st, delta, obs, obs_node, overflow = _run(tree, bias, stream, max_steps=budget, n_levels=n_levels,
                                              obs_steps=obs_steps, start=start)
    partial = bool(overflow or (n_levels > 0 and delta[-1] < 0))
    flags = []
    if overflow:
        flags.append("node-cap")
    if partial:
        flags.append("partial")
    return TreeWalkRecord(delta, int(st[1]), int(tree.depth[st[0]]), obs, int(st[6]), tree.n_nodes, partial,
                          tuple(flags), obs_node, int(st[0]))


def transition_probs(tree: TreeArena, v: int, bias: BiasSpec, *, root_uniform: Optional[bool] = None) -> dict:
    """Exact one-step law from an expanded node ``v`` as {node: prob}."""
    if tree.nchild[v] < 0:
        tree.expand(v)
    kids = tree.children(v)
    if v == 0:
        return {ROOT: 1.0}
    if root_uniform is None:
        root_uniform = not bias.random
    if bias.random:
        w = np.array([1.0] + [float(tree.coef[c]) for c in kids])
    elif v == ROOT and root_uniform and kids:
        return {c: 1.0 / len(kids) for c in kids}
    else:
        w = np.array([1.0] + [float(bias.beta)] * len(kids))
    w /= w.sum()
    out = {int(tree.parent[v]): float(w[0])}
    out.update({c: float(x) for c, x in zip(kids, w[1:])})
    return out


def escape_probability(tree: TreeArena, bias: BiasSpec, depth: int, trials: int, stream) -> float:
    """Fraction of walks from the root that reach ``depth`` before the
    artificial parent; the root uses the ordinary (non-uniform) rule."""
    st, _, _, _, overflow = _run(tree, bias, stream, stop_depth=depth, trials=trials, root_uniform=False)
    if overflow:
        raise MemoryError("node cap exceeded")
    return st[8] / trials


def _tree_mode(law: OffspringLaw) -> str:
    return "harris" if law.has_leaves else "plain"


def tree_speed(
    law: OffspringLaw,
    beta: float,
    steps: int,
    replicas: int,
    seed: SeedTree,
    *,
    burn_in: float = BURN_IN,
    mode: Optional[str] = None,
    node_cap: int = NODE_CAP,
) -> EstimateReport:
    """Mean over replicas of (|X_n| - |X_b|)/(n - b) with b = burn_in * n,
    on trees conditioned to survive.  Replicas that hit the node cap are
    dropped and counted in the flags."""
    b = int(burn_in * steps)
    vals = []
    for r in range(replicas):
        node = seed.child(r)
        tree = TreeArena(law, mode or _tree_mode(law), node.child(0), node_cap=node_cap)
        rec = simulate_tree_walk(tree, BiasSpec(beta=beta), steps, node.child(1), obs_steps=[b, steps])
        if "node-cap" in rec.flags:
            continue
        vals.append((rec.observed[1] - rec.observed[0]) / (steps - b))
    if not vals:
        raise MemoryError("every replica hit the node cap")
    rep = mean_report(np.asarray(vals), method="tree-speed")
    rep.seed = seed.key()
    if len(vals) < replicas:
        rep.flags = (*rep.flags, f"node-cap:{replicas - len(vals)}")
    rep.extra.update(beta=beta, steps=steps)
    return rep


def speed_curve(law: OffspringLaw, betas: Sequence[float], steps: int, replicas: int, seed: SeedTree) -> list[dict]:
    rows = []
    for i, beta in enumerate(betas):
        rep = tree_speed(law, float(beta), steps, replicas, seed.child(i))
        rows.append({"beta": float(beta), "v": rep.estimate, "ci_lo": rep.ci[0], "ci_hi": rep.ci[1],
                     "n_steps": steps})
    return rows


def hitting_exponent(
    law: OffspringLaw,
    bias: BiasSpec,
    level_grid,
    replicas: int,
    seed: SeedTree,
    *,
    max_steps: int = STEP_CAP,
    n_boot: int = 1000,
) -> EstimateReport:
    """Slope of ln median Delta_n against ln n over ``level_grid``."""
    grid = np.asarray(level_grid, dtype=np.int64)
    top = int(grid.max())
    rows, partial = [], 0
    for r in range(replicas):
        node = seed.child(r)
        tree = TreeArena(law, _tree_mode(law), node.child(0), bias_law=bias.law)
        rec = simulate_tree_walk(tree, bias, max_steps, node.child(1), n_levels=top)
        if rec.partial:
            partial += 1
            continue
        rows.append(rec.delta[grid - 1])
    rep = loglog_slope(grid, replicas=np.array(rows, dtype=float), n_boot=n_boot, seed=0)
    rep.flags = (f"partial:{partial}",) if partial else ()
    rep.extra["replica_deltas"] = np.array(rows)
    return rep


def aidekon_speed(
    law: OffspringLaw,
    beta: float,
    replicas: int,
    seed: SeedTree,
    *,
    depth: int = 40,
    inner: int = 1000,
    n_boot: int = 1000,
) -> EstimateReport:
    """Plug-in Monte Carlo of the speed as a ratio of expectations over Z and
    Z+1 independent escape probabilities.

    Each escape probability is the fraction of ``inner`` walks on one
    unconditioned tree that reach ``depth`` before the root's artificial
    parent."""
    m = law.mean
    if beta * m <= 1:
        raise ValueError("need beta > 1/m (transient regime)")
    bc = critical_bias(law) if law.has_leaves else None
    if bc is not None and beta >= bc:
        raise ValueError("need beta < beta_c (ballistic regime)")
    rng = seed.child(0).generator()
    cum = np.cumsum(law.p)
    cum[-1] = 1.0
    Z = np.searchsorted(cum, rng.random(replicas), side="right")
    bias = BiasSpec(beta=beta)
    ib = 1.0 / beta
    num = np.empty(replicas)
    den = np.empty(replicas)
    for r in range(replicas):
        e = np.empty(Z[r] + 1)
        for i in range(Z[r] + 1):
            node = seed.child(1, r, i)
            tree = TreeArena(law, "plain", node.child(0))
            e[i] = escape_probability(tree, bias, depth, inner, node.child(1))
        s = ib - 1.0 + e.sum()
        if s <= 0:
            num[r] = den[r] = 0.0
            continue
        num[r] = (Z[r] - ib) * e[0] / s
        den[r] = (Z[r] + ib) * e[0] / s
    pairs = np.column_stack([num, den])
    ratio = lambda x: x[:, 0].mean() / x[:, 1].mean()
    rep = bootstrap_ci(pairs, ratio, n_boot=n_boot, seed=0)
    rep.method = "aidekon-plugin"
    rep.seed = seed.key()
    flags = []
    if inner < 100:
        flags.append("undersampled-escape")
    if den.mean() <= 0:
        flags.append("degenerate-denominator")
    rep.flags = tuple(flags)
    rep.extra.update(depth=depth, inner=inner)
    return rep


# ----------------------------------------------------------------------------
# trap heights


def _generation_step(z, h_pmf, rng):
    """Next generation sizes for a vector of current sizes."""
    ks = np.flatnonzero(h_pmf)
    if ks.size == 2 and ks[0] == 0:
        # binary-type laws: one binomial per tree
        k = ks[1]
        return k * rng.binomial(z, h_pmf[k])
    out = np.zeros_like(z)
    rem = z.copy()
    left = 1.0
    for k in ks[:-1]:
        pk = min(1.0, h_pmf[k] / left) if left > 0 else 0.0
        c = rng.binomial(rem, pk)
        out += k * c
        rem -= c
        left -= h_pmf[k]
    out += ks[-1] * rem
    return out


def trap_height_tail(
    h_pmf,
    n_max: int,
    trees: int,
    seed: SeedTree,
    *,
    method: str = "splitting",
) -> dict:
    """Tail P[H >= n], n = 0..n_max, for subcritical GW trees with offspring
    ``h_pmf`` (H = height, a single root has H = 0).

    ``direct`` grows ``trees`` independent trees generation by generation.
    ``splitting`` keeps ``trees`` particles per generation: the surviving
    generation sizes are resampled with replacement back to ``trees``
    particles before each step, and P[H >= n+1 | H >= n] is the surviving
    fraction.  Both return successive ratios with binomial standard errors."""
    h = _as_pmf(h_pmf)
    if abs(h.sum() - 1) > 1e-12 or h[0] <= 0:
        raise ValueError("need a pmf with p0 > 0")
    if float(np.arange(h.size) @ h) >= 1:
        raise ValueError("trap law must be subcritical")
    rng = seed.generator()
    z = np.ones(trees, dtype=np.int64)
    tail = [1.0]
    cond = []
    counts = [trees]
    for n in range(n_max):
        z = _generation_step(z, h, rng)
        alive = z > 0
        a = int(alive.sum())
        if method == "direct":
            counts.append(a)
            tail.append(a / trees)
            cond.append(a / counts[-2] if counts[-2] else float("nan"))
            z = z[alive] if a else z[:0]
            if a == 0:
                tail.extend([0.0] * (n_max - n - 1))
                cond.extend([float("nan")] * (n_max - n - 1))
                counts.extend([0] * (n_max - n - 1))
                break
        elif method == "splitting":
            if a == 0:
                raise RuntimeError("all particles died; increase the particle count")
            p = a / z.size
            cond.append(p)
            counts.append(a)
            tail.append(tail[-1] * p)
            z = z[alive][rng.integers(0, a, trees)]
        else:
            raise ValueError(f"unknown method {method!r}")
    cond = np.array(cond)
    denom = np.array(counts[:-1], dtype=float) if method == "direct" else np.full(len(cond), float(trees))
    se = np.sqrt(np.clip(cond * (1 - cond), 0, None) / np.maximum(denom, 1))
    return {
        "n": np.arange(n_max + 1),
        "tail": np.array(tail),
        "ratio": cond,  # ratio[n] = P[H >= n+1 | H >= n]
        "ratio_se": se,
        "counts": np.array(counts),
        "method": method,
    }


# ----------------------------------------------------------------------------
# lattice effect


def lattice_diagnostic(
    law: OffspringLaw,
    beta: float,
    k_grid: Sequence[int],
    lam: Sequence[float],
    replicas: int,
    seed: SeedTree,
    *,
    max_steps: int = STEP_CAP,
) -> dict:
    """Distributions of Delta_{n}/n^{1/alpha} along n_lambda(k) = floor(lam f'(q)^-k).

    Reports KS distances between consecutive k for each lambda and between
    lambdas at the largest k."""
    q = extinction_prob(law)
    fq = float(law.fprime(q))
    bc = 1.0 / fq
    if beta <= bc:
        raise ValueError("need beta > beta_c")
    alpha = math.log(bc) / math.log(beta)
    levels = {(l, k): int(math.floor(l * fq ** (-k))) for l in lam for k in k_grid}
    top = max(levels.values())
    samples = {key: [] for key in levels}
    bias = BiasSpec(beta=beta)
    for r in range(replicas):
        node = seed.child(r)
        tree = TreeArena(law, "harris", node.child(0))
        rec = simulate_tree_walk(tree, bias, max_steps, node.child(1), n_levels=top)
        if rec.partial:
            continue
        for key, n in levels.items():
            samples[key].append(rec.delta[n - 1] / n ** (1.0 / alpha))
    samples = {k: np.asarray(v) for k, v in samples.items()}
    cross_k = {l: [ks_two_sample(samples[(l, a)], samples[(l, b)]) for a, b in zip(k_grid, k_grid[1:])] for l in lam}
    kk = max(k_grid)
    cross_l = {(a, b): ks_two_sample(samples[(a, kk)], samples[(b, kk)]) for i, a in enumerate(lam) for b in lam[i + 1:]}
    return {"alpha": alpha, "levels": levels, "samples": samples, "cross_k": cross_k, "cross_lambda": cross_l}


def random_bias_stable_ks(
    law: OffspringLaw,
    nu: BiasLaw,
    n: int,
    replicas: int,
    seed: SeedTree,
    *,
    max_steps: int = STEP_CAP,
) -> dict:
    """KS distance of median-normalised Delta_n to a CMS stable reference."""
    alpha, span = random_bias_alpha(law, nu)
    if not 0 < alpha < 1:
        raise ValueError("stable comparison needs alpha in (0, 1)")
    bias = BiasSpec(law=nu)
    d = []
    for r in range(replicas):
        node = seed.child(r)
        tree = TreeArena(law, "harris", node.child(0), bias_law=nu)
        rec = simulate_tree_walk(tree, bias, max_steps, node.child(1), n_levels=n)
        if not rec.partial:
            d.append(rec.delta[-1])
    d = np.asarray(d, dtype=float)
    ref = sample_stable_ca(alpha, seed.child(10**6), d.size)
    return {"alpha": alpha, "lattice": span, "ks": ks_two_sample(median_normalize(d), median_normalize(ref)),
            "n_used": d.size}
