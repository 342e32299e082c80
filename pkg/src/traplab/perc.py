"""Bond percolation boxes, the conductance-biased walk and the backtrack function.

Vertices of a box with side lengths ``sides`` are flattened in row-major
order.  ``open_edges[k, v]`` is the state of the edge between ``v`` and
``v + e_k``; entries on the last slab along axis ``k`` are always closed.
The box stands in for the infinite cluster: "largest cluster" replaces
K_infinity and "reaches the far boundary" replaces "infinite path".
"""
from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np

from .estat import EstimateReport, loglog_slope, mean_report
from .randkit import SeedTree, as_generator

__all__ = [
    "PercBox",
    "BiasVector",
    "PercWalkRecord",
    "gen_percbox",
    "conductance_walk",
    "transition_probs",
    "backtrack",
    "far_boundary_mask",
    "zeta_estimate",
    "ZetaFit",
    "speed_curve",
]

P_C = {2: 0.5}
_MAGIC = b"PBOX"


def _strides(sides):
    st = np.ones(len(sides), dtype=np.int64)
    for k in range(len(sides) - 2, -1, -1):
        st[k] = st[k + 1] * sides[k + 1]
    return st


def _coords(sides):
    """(N, d) integer coordinates of every vertex, row-major."""
    grids = np.indices(sides).reshape(len(sides), -1).T
    return np.ascontiguousarray(grids, dtype=np.int64)


@nb.njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@nb.njit(cache=True)
def _label_clusters(open_edges, strides, n):
    d = open_edges.shape[0]
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    for k in range(d):
        s = strides[k]
        for v in range(n):
            if open_edges[k, v]:
                a = _find(parent, v)
                b = _find(parent, v + s)
                if a != b:
                    if size[a] < size[b]:
                        a, b = b, a
                    parent[b] = a
                    size[a] += size[b]
    # compact labels in order of smallest member vertex
    labels = np.empty(n, dtype=np.int64)
    remap = -np.ones(n, dtype=np.int64)
    nxt = 0
    for v in range(n):
        r = _find(parent, v)
        if remap[r] < 0:
            remap[r] = nxt
            nxt += 1
        labels[v] = remap[r]
    return labels, nxt


@dataclass(frozen=True)
class BiasVector:
    strength: float
    direction: tuple[float, ...]

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError("bias strength must be non-negative")
        u = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise ValueError("bias direction must be a Euclidean unit vector")
        object.__setattr__(self, "direction", tuple(float(c) for c in u))

    @property
    def vector(self) -> np.ndarray:
        return self.strength * np.asarray(self.direction)


@dataclass
class PercBox:
    d: int
    sides: tuple[int, ...]
    p: float
    open_edges: np.ndarray  # (d, N) bool
    seed: Optional[SeedTree] = None
    labels: np.ndarray = field(init=False, repr=False)
    n_clusters: int = field(init=False)

    def __post_init__(self):
        self.sides = tuple(int(s) for s in self.sides)
        if len(self.sides) != self.d:
            raise ValueError("need one side length per dimension")
        self.open_edges = np.ascontiguousarray(self.open_edges, dtype=np.bool_)
        self.strides = _strides(self.sides)
        self.labels, self.n_clusters = _label_clusters(self.open_edges, self.strides, self.n_vertices)

    @property
    def n_vertices(self) -> int:
        return int(np.prod(self.sides))

    def index(self, x: Sequence[int]) -> int:
        return int(np.dot(np.asarray(x, dtype=np.int64), self.strides))

    def coords(self, v: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(v, self.sides))

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)

    @property
    def largest_label(self) -> int:
        # argmax returns the first maximiser, i.e. the one with the smallest member
        return int(np.argmax(self.cluster_sizes()))

    def in_largest(self, v: int) -> bool:
        return bool(self.labels[v] == self.largest_label)

    def largest_fraction(self) -> float:
        return float(self.cluster_sizes().max() / self.n_vertices)

    def n_open(self) -> int:
        return int(self.open_edges.sum())

    def n_edges(self) -> int:
        return int(sum(np.prod(self.sides) // s * (s - 1) for s in self.sides))

    def neighbours(self, v: int) -> list[int]:
        out = []
        x = self.coords(v)
        for k in range(self.d):
            s = int(self.strides[k])
            if x[k] < self.sides[k] - 1 and self.open_edges[k, v]:
                out.append(v + s)
            if x[k] > 0 and self.open_edges[k, v - s]:
                out.append(v - s)
        return out

    def with_edge(self, k: int, v: int, state: bool = True) -> "PercBox":
        e = self.open_edges.copy()
        e[k, v] = state
        return PercBox(self.d, self.sides, self.p, e, self.seed)

    # portable layout: magic, version, d, sides, p, seed root, path, packed edge bits
    def to_bytes(self) -> bytes:
        root = self.seed.root if self.seed else 0
        path = self.seed.path if self.seed else ()
        head = _MAGIC + struct.pack("<BB", 1, self.d)
        head += struct.pack(f"<{self.d}I", *self.sides)
        head += struct.pack("<dQI", self.p, root, len(path))
        head += struct.pack(f"<{len(path)}Q", *path)
        return head + np.packbits(self.open_edges.ravel(), bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "PercBox":
        if buf[:4] != _MAGIC:
            raise ValueError("not a PercBox blob")
        off = 4
        version, d = struct.unpack_from("<BB", buf, off)
        off += 2
        if version != 1:
            raise ValueError(f"unsupported version {version}")
        sides = struct.unpack_from(f"<{d}I", buf, off)
        off += 4 * d
        p, root, npath = struct.unpack_from("<dQI", buf, off)
        off += 20
        path = struct.unpack_from(f"<{npath}Q", buf, off)
        off += 8 * npath
        n = int(np.prod(sides))
        bits = np.unpackbits(np.frombuffer(buf[off:], dtype=np.uint8), bitorder="little")[: d * n]
        return cls(d, tuple(sides), p, bits.reshape(d, n).astype(bool), SeedTree(root, path))


def gen_percbox(d: int, sides, p: float, stream) -> PercBox:
    if not 0 < p < 1:
        raise ValueError("retention probability must lie in (0, 1)")
    if isinstance(sides, int):
        sides = (sides,) * d
    sides = tuple(int(s) for s in sides)
    if len(sides) != d or min(sides) < 2:
        raise ValueError("sides must be >= 2, one per dimension")
    rng = as_generator(stream)
    n = int(np.prod(sides))
    edges = rng.random((d, n)) < p
    coords = np.indices(sides).reshape(d, -1)
    for k in range(d):
        edges[k, coords[k] == sides[k] - 1] = False
    return PercBox(d, sides, p, edges, stream if isinstance(stream, SeedTree) else None)


# ----------------------------------------------------------------------------
# biased walk


@dataclass
class PercWalkRecord:
    start: int
    steps: int
    final: int
    displacement: np.ndarray  # final - start, lattice units
    hits: np.ndarray  # hits[n-1] = first time (x - x0) . dir >= n, -1 if never
    exited: bool
    isolated: bool


def transition_probs(box: PercBox, bias: BiasVector, v: int) -> dict[int, float]:
    """Exact p(x, y) from the conductances ``exp((x + y) . l)``."""
    ell = bias.vector
    x = np.asarray(box.coords(v))
    nb_ = box.neighbours(v)
    if not nb_:
        return {v: 1.0}
    c = np.array([math.exp(float((x + np.asarray(box.coords(y))) @ ell)) for y in nb_])
    return dict(zip(nb_, c / c.sum()))


@nb.njit(cache=True)
def _perc_walk(open_edges, sides, strides, start, n_steps, ell, direction, n_levels, u):
    d = open_edges.shape[0]
    x = np.empty(d, dtype=np.int64)
    rem = start
    for k in range(d):
        x[k] = rem // strides[k]
        rem -= x[k] * strides[k]
    x0 = x.copy()
    v = start
    hits = -np.ones(n_levels, dtype=np.int64)
    wplus = np.exp(ell)
    wminus = np.exp(-ell)
    w = np.empty(2 * d)
    best = 0
    exited = False
    isolated = False
    t = 0
    while t < n_steps:
        tot = 0.0
        for k in range(d):
            w[2 * k] = wplus[k] if (x[k] < sides[k] - 1 and open_edges[k, v]) else 0.0
            w[2 * k + 1] = wminus[k] if (x[k] > 0 and open_edges[k, v - strides[k]]) else 0.0
            tot += w[2 * k] + w[2 * k + 1]
        t += 1
        if tot == 0.0:
            isolated = True
            continue
        r = u[t - 1] * tot
        j = 0
        acc = w[0]
        while acc <= r and j < 2 * d - 1:
            j += 1
            acc += w[j]
        k = j // 2
        if j % 2 == 0:
            x[k] += 1
            v += strides[k]
        else:
            x[k] -= 1
            v -= strides[k]
        proj = 0.0
        for q in range(d):
            proj += (x[q] - x0[q]) * direction[q]
        lvl = int(math.floor(proj + 1e-12))
        while best < lvl and best < n_levels:
            hits[best] = t
            best += 1
        on_face = False
        for q in range(d):
            if x[q] == 0 or x[q] == sides[q] - 1:
                on_face = True
        if on_face:
            exited = True
            break
    return v, t, hits, exited, isolated, x - x0


def conductance_walk(
    box: PercBox,
    bias: BiasVector,
    start: int,
    n_steps: int,
    stream,
    *,
    n_levels: int = 0,
    require_largest: bool = True,
) -> PercWalkRecord:
    if require_largest and not box.in_largest(start):
        raise ValueError("start vertex is not in the largest cluster")
    rng = as_generator(stream)
    u = rng.random(n_steps)
    sides = np.asarray(box.sides, dtype=np.int64)
    v, t, hits, exited, isolated, disp = _perc_walk(
        box.open_edges, sides, box.strides, int(start), int(n_steps),
        bias.vector.astype(float), np.asarray(bias.direction, dtype=float), int(n_levels), u,
    )
    return PercWalkRecord(int(start), int(t), int(v), disp, hits, bool(exited), bool(isolated))


# ----------------------------------------------------------------------------
# backtrack function


def far_boundary_mask(box: PercBox, direction) -> np.ndarray:
    """Faces whose outward normal has a positive component along ``direction``."""
    u = np.asarray(direction, dtype=float)
    c = _coords(box.sides)
    mask = np.zeros(box.n_vertices, dtype=bool)
    for k in range(box.d):
        if u[k] > 1e-15:
            mask |= c[:, k] == box.sides[k] - 1
        elif u[k] < -1e-15:
            mask |= c[:, k] == 0
    return mask


@nb.njit(cache=True)
def _minimax(open_edges, sides, strides, proj, target, src):
    """Dijkstra on path cost max_i (proj[src] - proj[v_i]); ties broken by
    (cost, hops, vertex). Returns -1.0 when no target is reachable."""
    d = open_edges.shape[0]
    n = proj.shape[0]
    INF = np.inf
    best = np.full(n, INF)
    done = np.zeros(n, dtype=np.bool_)
    best[src] = 0.0
    heap = [(0.0, 0, src)]
    base = proj[src]
    while len(heap) > 0:
        cost, hops, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        if target[v]:
            return cost
        rem = v
        for k in range(d):
            xk = (rem // strides[k]) % sides[k]
            for sgn in (1, -1):
                if sgn == 1:
                    if xk >= sides[k] - 1 or not open_edges[k, v]:
                        continue
                    w = v + strides[k]
                else:
                    if xk == 0 or not open_edges[k, v - strides[k]]:
                        continue
                    w = v - strides[k]
                if done[w]:
                    continue
                c = max(cost, base - proj[w])
                if c < best[w]:
                    best[w] = c
                    heapq.heappush(heap, (c, hops + 1, w))
    return -1.0


def backtrack(box: PercBox, x: int, direction) -> Optional[float]:
    """Minimal unavoidable retreat against ``direction`` on open paths from
    ``x`` to the far boundary; ``None`` if no such path exists."""
    u = np.asarray(direction, dtype=float)
    proj = _coords(box.sides).astype(float) @ u
    target = far_boundary_mask(box, u)
    sides = np.asarray(box.sides, dtype=np.int64)
    r = _minimax(box.open_edges, sides, box.strides, proj, target, int(x))
    if r < 0:
        return None
    # the running max starts from the path's own origin, so BK >= 0
    return max(0.0, float(r))


@nb.njit(cache=True)
def _bk_batch(edges_all, sides, strides, proj, target, src):
    out = np.empty(edges_all.shape[0])
    for b in range(edges_all.shape[0]):
        out[b] = _minimax(edges_all[b], sides, strides, proj, target, src)
    return out


@dataclass
class ZetaFit:
    zeta: float
    stderr: float
    r2: float
    levels: np.ndarray
    tail: np.ndarray  # P-hat[BK(0) > n]
    counts: np.ndarray
    n_boxes: int
    n_connected: int
    flags: tuple[str, ...] = ()

    @property
    def lambda_c(self) -> float:
        return self.zeta / 2.0

    def alpha(self, strength: float) -> float:
        return self.zeta / (2.0 * strength)


def bk_samples(d: int, p: float, direction, side: int, boxes: int, seed: SeedTree, *, chunk: int = 2000):
    """BK at the box centre for ``boxes`` independent boxes (NaN if the
    centre does not reach the far boundary)."""
    sides = (side,) * d
    st = _strides(sides)
    u = np.asarray(direction, dtype=float)
    c = _coords(sides)
    proj = c.astype(float) @ u
    n = int(np.prod(sides))
    last = np.zeros((d, n), dtype=bool)
    for k in range(d):
        last[k] = c[:, k] == side - 1
    dummy = PercBox.__new__(PercBox)
    dummy.sides, dummy.d = sides, d
    dummy.strides = st
    target = far_boundary_mask(dummy, u)
    src = int(np.dot(np.full(d, side // 2), st))
    out = np.empty(boxes)
    for start in range(0, boxes, chunk):
        m = min(chunk, boxes - start)
        rng = seed.child(start // chunk).generator()
        e = rng.random((m, d, n)) < p
        e[:, last] = False
        out[start : start + m] = _bk_batch(e, np.asarray(sides, dtype=np.int64), st, proj, target, src)
    out[out < 0] = np.nan
    return np.maximum(out, 0.0, where=~np.isnan(out), out=out)


def zeta_estimate(
    d: int,
    p: float,
    direction,
    n_max: int,
    boxes: int,
    seed: SeedTree,
    *,
    n_min: int = 2,
    side: Optional[int] = None,
) -> ZetaFit:
    """Fit ``ln P[BK(0) > n] ~ -zeta n`` over ``n_min..n_max``."""
    if d == 2 and p <= P_C[2]:
        raise ValueError("need p > p_c(2) = 1/2")
    side = side or 4 * n_max + 1
    if side < 4 * n_max:
        raise ValueError("box side must be at least 4 n_max")
    bk = bk_samples(d, p, direction, side, boxes, seed)
    ok = bk[~np.isnan(bk)]
    levels = np.arange(n_min, n_max + 1)
    counts = np.array([(ok > n + 1e-9).sum() for n in levels])
    flags = []
    if counts[-1] < 30:
        flags.append("few-tail-samples")
    use = counts > 0
    if not use.all():
        flags.append("empty-levels-dropped")
    if use.sum() < 2:
        raise ValueError("too few positive backtrack samples to fit")
    tail = counts / ok.size
    x, y = levels[use].astype(float), np.log(tail[use])
    # binomial weights: var(ln p-hat) ~ (1 - p) / (N p)
    w = counts[use] / (1 - tail[use])
    wn = w / w.sum()
    mx, my = wn @ x, wn @ y
    sxx = wn @ (x - mx) ** 2
    slope = wn @ ((x - mx) * (y - my)) / sxx
    resid = y - (my + slope * (x - mx))
    r2 = 1.0 - (wn @ resid**2) / (wn @ (y - my) ** 2)
    se = math.sqrt(1.0 / (w.sum() * sxx))
    if counts[-1] < 30:
        se *= 2.0
    return ZetaFit(float(-slope), float(se), float(r2), levels, tail, counts, boxes, int(ok.size), tuple(flags))


# ----------------------------------------------------------------------------
# speed curves


def _start_vertex(box: PercBox, want) -> Optional[int]:
    """Largest-cluster vertex closest (Euclidean) to the ``want`` coordinates."""
    c = _coords(box.sides)
    lab = box.largest_label
    cand = np.flatnonzero(box.labels == lab)
    if cand.size == 0:
        return None
    dist = ((c[cand] - np.asarray(want)) ** 2).sum(axis=1)
    return int(cand[np.argmin(dist)])


def speed_curve(
    d: int,
    p: float,
    direction,
    lambdas,
    steps: int,
    replicas: int,
    seed: SeedTree,
    *,
    transverse: Optional[int] = None,
    length: Optional[int] = None,
    levels: int = 0,
) -> list[dict]:
    """Directional speed ``X_n . dir / n`` per bias strength.

    Boxes are elongated along the dominant axis of ``direction`` (length
    ``steps + margin`` unless ``length`` is given) with transverse sides
    ``6 sqrt(steps)``; replicas that touch a face are dropped from the speed
    and counted.  With ``levels`` the first hitting times of the levels
    1..levels are also fitted; a replica that exits after hitting every level
    still contributes to that fit.
    """
    u = np.asarray(direction, dtype=float)
    ax = int(np.argmax(np.abs(u)))
    width = transverse or max(16, int(6 * math.sqrt(steps)))
    margin = width // 2
    rows = []
    for li, lam in enumerate(lambdas):
        bias = BiasVector(float(lam), tuple(u))
        speeds, slopes_d = [], []
        truncated = 0
        for r in range(replicas):
            node = seed.child(li, r)
            sides = [width] * d
            want = [width // 2] * d
            if lam > 0:
                sides[ax] = (length or steps) + 2 * margin
                want[ax] = margin if u[ax] > 0 else sides[ax] - 1 - margin
            box = gen_percbox(d, tuple(sides), p, node.child(0))
            s0 = _start_vertex(box, want)
            rec = conductance_walk(box, bias, s0, steps, node.child(1), n_levels=levels)
            if levels and rec.hits[-1] > 0:
                slopes_d.append(rec.hits)
            if rec.exited:
                truncated += 1
                continue
            speeds.append(float(rec.displacement @ u) / rec.steps)
        row = {"lambda": float(lam), "replicas": replicas, "truncated": truncated}
        if speeds:
            rep = mean_report(speeds, method="directional-speed")
            row.update(v=rep.estimate, ci_lo=rep.ci[0], ci_hi=rep.ci[1], stderr=rep.stderr, used=len(speeds))
        else:
            row.update(v=float("nan"), ci_lo=float("nan"), ci_hi=float("nan"), stderr=float("nan"), used=0)
        if levels and slopes_d:
            h = np.array(slopes_d, dtype=float)
            good = np.all(h > 0, axis=1)
            if good.sum() >= 3:
                grid = np.unique(np.geomspace(max(2, levels // 20), levels, 12).astype(int))
                rep = loglog_slope(grid, replicas=h[good][:, grid - 1], n_boot=200, seed=li)
                row.update(hit_slope=rep.estimate, hit_slope_lo=rep.ci[0], hit_slope_hi=rep.ci[1])
        rows.append(row)
    return rows
