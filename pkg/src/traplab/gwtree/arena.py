"""Lazily grown rooted trees and the biased walk kernel on them.

Node 0 is an artificial parent of the root (node 1).  Children of a node are
stored contiguously, so ``first[v] + i`` is its i-th child.  ``nchild[v] < 0``
marks a node whose offspring are not drawn yet.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from ..randkit import SeedTree, as_generator
from .analytics import BiasLaw, OffspringLaw, bud_count_table, harris_split

__all__ = ["TreeArena", "gen_tree", "BiasSpec", "MODES", "KIND_PLAIN", "KIND_TRAP", "KIND_PIPE"]

MODES = {"plain": 0, "harris": 1, "trap": 2, "pipes": 3, "iic": 4}
KIND_PLAIN, KIND_TRAP, KIND_PIPE = 0, 1, 2
NODE_CAP = 10**7
CHUNK = 1 << 16
ROOT = 1


def _cum(p) -> np.ndarray:
    c = np.cumsum(np.asarray(p, dtype=float))
    c[-1] = 1.0
    return c


@dataclass(frozen=True)
class BiasSpec:
    """Either a fixed bias ``beta`` or a finite-atom law of edge coefficients."""

    beta: Optional[float] = None
    law: Optional[BiasLaw] = None

    def __post_init__(self):
        if (self.beta is None) == (self.law is None):
            raise ValueError("give exactly one of beta or law")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def random(self) -> bool:
        return self.law is not None


class TreeArena:
    """Growable node store.  Offspring are drawn from a uniform buffer fed by
    ``stream`` when a node is first expanded."""

    def __init__(self, law: Optional[OffspringLaw], mode: str, stream: SeedTree, *, bias_law: Optional[BiasLaw] = None,
                 node_cap: int = NODE_CAP, capacity: int = 1 << 12):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.law = law
        self.node_cap = node_cap
        self.rng = as_generator(stream)
        K = 1
        if mode == "pipes":
            self.cum_a = np.ones(1)
            self.cum_b = np.ones(1)
            self.table = np.ones((1, 1))
            K = 3
        else:
            if law is None:
                raise ValueError("mode needs an offspring law")
            K = law.kmax
            if mode == "plain":
                self.cum_a, self.cum_b = _cum(law.p), np.ones(1)
                self.table = np.ones((1, 1))
            elif mode == "iic":
                # spine vertices draw from k p_k (mean one), buds from p
                if abs(law.mean - 1.0) > 1e-12:
                    raise ValueError("iic mode needs a critical law")
                self.cum_a = _cum(np.arange(law.p.size) * law.p)
                self.cum_b = _cum(law.p)
                self.table = np.ones((1, 1))
            elif mode == "harris":
                g, h = harris_split(law)
                self.cum_a = _cum(g)
                self.cum_b = _cum(h) if h is not None else np.ones(1)
                self.table = np.cumsum(bud_count_table(law), axis=1) if h is not None else np.ones((K + 1, 1))
                if h is not None:
                    self.table[:, -1] = 1.0
            else:  # trap: h-GW tree
                _, h = harris_split(law) if law.supercritical else (None, law.p)
                if h is None:
                    raise ValueError("trap mode needs a law with leaves")
                self.cum_a, self.cum_b = np.ones(1), _cum(h)
                self.table = np.ones((1, 1))
        self.kmax = max(K, 1)
        self.random_bias = bias_law is not None
        if bias_law is not None:
            self.nu_atoms = np.asarray(bias_law.atoms)
            self.nu_cum = _cum(bias_law.probs)
        else:
            self.nu_atoms = np.ones(1)
            self.nu_cum = np.ones(1)
        n = max(capacity, 16)
        self.parent = np.zeros(n, dtype=np.int32)
        self.first = np.zeros(n, dtype=np.int32)
        self.nchild = np.full(n, -1, dtype=np.int32)
        self.depth = np.zeros(n, dtype=np.int32)
        self.kind = np.zeros(n, dtype=np.int8)
        self.coef = np.ones(n if self.random_bias else 1)
        # node 0: artificial parent with the root as only child
        self.parent[0], self.first[0], self.nchild[0], self.depth[0] = 0, ROOT, 1, -1
        self.parent[ROOT], self.depth[ROOT] = 0, 0
        self.kind[ROOT] = KIND_TRAP if mode == "trap" else KIND_PLAIN
        self.n_nodes = 2
        self.tu = np.empty(0)
        self.kt = 0
        self.overflow = False

    # -- buffers -------------------------------------------------------------
    def refill(self):
        # small first buffers keep short walks cheap; later ones double
        self._chunk = min(CHUNK, 2 * getattr(self, "_chunk", 512))
        self.tu = self.rng.random(self._chunk)
        self.kt = 0

    def grow(self):
        n = self.parent.size
        if n >= self.node_cap:
            self.overflow = True
            return False
        m = min(2 * n, self.node_cap + 4 * self.kmax)
        self.parent = np.concatenate([self.parent, np.zeros(m - n, dtype=np.int32)])
        self.first = np.concatenate([self.first, np.zeros(m - n, dtype=np.int32)])
        self.nchild = np.concatenate([self.nchild, np.full(m - n, -1, dtype=np.int32)])
        self.depth = np.concatenate([self.depth, np.zeros(m - n, dtype=np.int32)])
        self.kind = np.concatenate([self.kind, np.zeros(m - n, dtype=np.int8)])
        if self.random_bias:
            self.coef = np.concatenate([self.coef, np.ones(m - n)])
        return True

    def args(self):
        return (
            self.parent, self.first, self.nchild, self.depth, self.kind, self.coef,
            MODES[self.mode], self.cum_a, self.cum_b, self.table, self.nu_atoms, self.nu_cum,
            self.random_bias, self.kmax,
        )

    # -- queries -------------------------------------------------------------
    def children(self, v: int) -> list[int]:
        k = int(self.nchild[v])
        return [] if k < 0 else list(range(int(self.first[v]), int(self.first[v]) + k))

    def expand(self, v: int) -> None:
        while True:
            st = np.array([self.n_nodes, self.kt], dtype=np.int64)
            code = _expand(v, st, self.tu, *self.args())
            if code == 0:
                self.n_nodes, self.kt = int(st[0]), int(st[1])
                return
            if code == 2:
                self.refill()
            elif not self.grow():
                raise MemoryError("node cap exceeded")

    def grow_all(self, max_depth: int = 1 << 30) -> bool:
        """Expand breadth-first until the tree is finite or ``max_depth`` is
        reached; returns False if the node cap was hit."""
        v = ROOT
        while v < self.n_nodes:
            if self.depth[v] < max_depth and self.nchild[v] < 0:
                try:
                    self.expand(v)
                except MemoryError:
                    return False
            v += 1
        return True

    def height(self) -> int:
        d = self.depth[ROOT : self.n_nodes]
        return int(d.max()) if d.size else 0

    def conductance(self, v: int, beta: float) -> float:
        """c(parent(v), v) = beta^{|v|-1}."""
        return beta ** (int(self.depth[v]) - 1)


def gen_tree(law, mode: str, stream: SeedTree, **kw) -> TreeArena:
    return TreeArena(law, mode, stream, **kw)


@nb.njit(cache=True)
def _draw(cum, u):
    i = 0
    while cum[i] <= u and i < cum.shape[0] - 1:
        i += 1
    return i


@nb.njit(cache=True)
def _expand(v, st, tu, parent, first, nchild, depth, kind, coef, mode, cum_a, cum_b, table, nu_atoms, nu_cum,
            random_bias, kmax):
    """Draw the offspring of ``v``.  st = [n_nodes, kt]; returns 0 ok,
    2 need tree uniforms, 3 need capacity."""
    n_nodes, kt = st[0], st[1]
    if kt + 2 + kmax > tu.shape[0]:
        return 2
    if n_nodes + kmax + 1 > parent.shape[0]:
        return 3
    kd = kind[v]
    nb_ = 0  # same-kind children
    nt = 0  # trap children (harris backbone only)
    np_ = 0  # pipe children
    if mode == 0:
        nb_ = _draw(cum_a, tu[kt])
        kt += 1
    elif mode == 1:
        if kd == 0:
            nb_ = _draw(cum_a, tu[kt])
            kt += 1
            if table.shape[1] > 1:
                nt = _draw(table[nb_], tu[kt])
                kt += 1
        else:
            nt = _draw(cum_b, tu[kt])
            kt += 1
    elif mode == 2:
        nt = _draw(cum_b, tu[kt])
        kt += 1
    elif mode == 4:
        if kd == 0:
            # children are exchangeable, so the spine child goes first
            k0 = _draw(cum_a, tu[kt])
            kt += 1
            nb_ = 1
            nt = k0 - 1
        else:
            nt = _draw(cum_b, tu[kt])
            kt += 1
    else:
        if kd == 0:
            nb_ = 2
            np_ = 1
        else:
            np_ = 1
    k = nb_ + nt + np_
    first[v] = n_nodes
    nchild[v] = k
    for i in range(k):
        c = n_nodes + i
        parent[c] = v
        depth[c] = depth[v] + 1
        nchild[c] = -1
        if i < nb_:
            kind[c] = kd
        elif i < nb_ + nt:
            kind[c] = 1
        else:
            kind[c] = 2
        if random_bias:
            coef[c] = nu_atoms[_draw(nu_cum, tu[kt])]
            kt += 1
    st[0] = n_nodes + k
    st[1] = kt
    return 0


@nb.njit(cache=True)
def _walk(
    st, wu, tu, parent, first, nchild, depth, kind, coef, mode, cum_a, cum_b, table, nu_atoms, nu_cum,
    random_bias, kmax, beta, root_uniform, max_steps, delta, obs_steps, obs_depth, obs_node, stop_depth,
    absorb_parent, trials,
):
    """Biased walk on the lazy tree.

    st = [cur, n, next_level, kw, kt, n_nodes, root_visits, trial, successes, oi]
    Returns 0 done, 1 need walk uniforms, 2 need tree uniforms, 3 need
    capacity.  With ``trials > 0`` the walk restarts at the root after each
    absorption at node 0 or arrival at ``stop_depth`` and counts arrivals.
    """
    cur, n, lvl, kw = st[0], st[1], st[2], st[3]
    oi = st[9]
    nl = delta.shape[0]
    no = obs_steps.shape[0]
    sub = np.zeros(2, dtype=np.int64)
    code = 0
    while True:
        while oi < no and obs_steps[oi] == n:
            obs_depth[oi] = depth[cur]
            obs_node[oi] = cur
            oi += 1
        if trials > 0:
            if st[7] >= trials:
                code = 0
                break
            hit = False
            if cur == 0:
                hit = True
            elif depth[cur] >= stop_depth:
                st[8] += 1
                hit = True
            if hit:
                st[7] += 1
                cur = 1
                continue
        else:
            if n >= max_steps or (nl > 0 and lvl > nl) or (absorb_parent and cur == 0):
                code = 0
                break
            if stop_depth > 0 and depth[cur] >= stop_depth:
                code = 0
                break
        if kw >= wu.shape[0]:
            code = 1
            break
        if nchild[cur] < 0:
            sub[0] = st[5]
            sub[1] = st[4]
            c = _expand(cur, sub, tu, parent, first, nchild, depth, kind, coef, mode, cum_a, cum_b, table,
                        nu_atoms, nu_cum, random_bias, kmax)
            if c != 0:
                code = c
                break
            st[5] = sub[0]
            st[4] = sub[1]
        k = nchild[cur]
        u = wu[kw]
        kw += 1
        f0 = first[cur]
        if cur == 0:
            nxt = 1
        elif random_bias:
            # the root always uses the artificial-parent rule here
            tot = 1.0
            for i in range(k):
                tot += coef[f0 + i]
            r = u * tot
            nxt = parent[cur]
            if r >= 1.0:
                acc = 1.0
                nxt = f0 + k - 1
                for i in range(k):
                    acc += coef[f0 + i]
                    if r < acc:
                        nxt = f0 + i
                        break
        else:
            if cur == 1 and root_uniform:
                if k == 0:
                    nxt = cur
                else:
                    j = int(u * k)
                    if j >= k:
                        j = k - 1
                    nxt = f0 + j
            else:
                tot = 1.0 + beta * k
                r = u * tot
                if r < 1.0 or k == 0:
                    nxt = parent[cur]
                else:
                    j = int((r - 1.0) / beta)
                    if j >= k:
                        j = k - 1
                    nxt = f0 + j
        cur = nxt
        n += 1
        if cur == 1:
            st[6] += 1
        d = depth[cur]
        if d == lvl:
            if lvl <= nl:
                delta[lvl - 1] = n
            lvl += 1
    st[0], st[1], st[2], st[3] = cur, n, lvl, kw
    st[9] = oi
    return code
