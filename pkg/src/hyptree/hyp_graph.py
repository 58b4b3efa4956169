"""Rooted weighted graphs as finite geodesic spaces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Hashable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .metric_core import FiniteMetricSpace, MetricError, as_fraction, common_scale

GAMMA1_GRID = (Fraction(1), Fraction(5, 4), Fraction(3, 2), Fraction(2), Fraction(3))


class GraphError(MetricError):
    pass


@dataclass(frozen=True)
class GeodesicPath:
    vertices: tuple
    length: Fraction


@dataclass(frozen=True)
class QuasiGeodesicConstants:
    gamma1: Fraction
    gamma2: Fraction
    frontier: dict  # gamma1 -> least gamma2


@dataclass(frozen=True)
class DeltaResult:
    delta: Fraction
    witness: tuple | None  # (x, y, z, p) vertex ids: p on a side [x,z], far from [x,y] u [y,z]
    method: str


class HypGraphSpace:
    """Connected graph with positive rational edge lengths and a designated root.

    Edge lengths are brought to a common denominator so that every distance is
    an integer number of ``1/scale`` units; all comparisons are exact.
    """

    def __init__(self, vertices: Sequence[Hashable], edges, root, horizon=0, proxies=()):
        self.vertices = tuple(vertices)
        self.index = {v: i for i, v in enumerate(self.vertices)}
        if len(self.index) != len(self.vertices):
            raise GraphError("duplicate vertex ids")
        n = len(self.vertices)
        if n == 0:
            raise GraphError("empty graph")
        lengths = {}
        for u, v, ln in edges:
            ln = as_fraction(ln)
            if ln <= 0:
                raise GraphError(f"non-positive edge length on {u!r}-{v!r}")
            a, b = self._idx(u), self._idx(v)
            if a == b:
                raise GraphError(f"loop at {u!r}")
            key = (min(a, b), max(a, b))
            lengths[key] = min(ln, lengths.get(key, ln))
        self.edge_lengths = dict(sorted(lengths.items()))
        self.scale = common_scale(self.edge_lengths.values())
        self.root = root
        self.r = self._idx(root)
        self.horizon = as_fraction(horizon)
        self.proxies = tuple(proxies)
        self.proxy_idx = [self._idx(p) for p in self.proxies]

        nbrs = [[] for _ in range(n)]
        for (a, b), ln in self.edge_lengths.items():
            w = int(ln * self.scale)
            nbrs[a].append((b, w))
            nbrs[b].append((a, w))
        self.adj = [sorted(x) for x in nbrs]

        if self.edge_lengths:
            rows, cols = zip(*self.edge_lengths)
            w = [int(ln * self.scale) for ln in self.edge_lengths.values()]
            A = csr_matrix((w, (rows, cols)), shape=(n, n))
        else:
            A = csr_matrix((n, n))
        ncomp, _ = connected_components(A, directed=False)
        if ncomp != 1:
            raise GraphError("graph is disconnected")
        D = shortest_path(A, method="D", directed=False)
        if D.max() >= 2**31:
            raise GraphError("distances overflow 32-bit units")
        self.D = np.rint(D).astype(np.int32)
        self.D.setflags(write=False)
        self._rows = self.D.tolist()
        for p in self.proxy_idx:
            if self._rows[self.r][p] < self.horizon * self.scale:
                raise GraphError(f"proxy {self.vertices[p]!r} lies inside the horizon")
        self._delta = None

    def _idx(self, v) -> int:
        try:
            return self.index[v]
        except KeyError:
            raise GraphError(f"unknown vertex {v!r}") from None

    def __len__(self):
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edge_lengths)

    @cached_property
    def metric(self) -> FiniteMetricSpace:
        return FiniteMetricSpace(self.vertices, self.D, self.scale)

    def is_tree(self) -> bool:
        return self.n_edges == len(self) - 1

    def value(self, units) -> Fraction:
        return Fraction(int(units), self.scale)

    def units(self, length) -> Fraction:
        return as_fraction(length) * self.scale

    def dist(self, u, v) -> Fraction:
        return self.value(self._rows[self._idx(u)][self._idx(v)])

    def edge_units(self, a: int, b: int) -> int:
        return int(self.edge_lengths[(min(a, b), max(a, b))] * self.scale)

    def max_edge_units(self) -> int:
        return max((int(ln * self.scale) for ln in self.edge_lengths.values()), default=0)

    # geodesics -----------------------------------------------------------

    def canonical_path(self, i: int, j: int) -> list[int]:
        """Lexicographically least shortest path (by vertex index) from i to j."""
        rows, adj = self._rows, self.adj
        path = [i]
        v = i
        while v != j:
            rem = rows[v][j]
            for w, ln in adj[v]:
                if ln + rows[w][j] == rem:
                    v = w
                    break
            path.append(v)
        return path

    def canonical_geodesic(self, x, y) -> GeodesicPath:
        p = self.canonical_path(self._idx(x), self._idx(y))
        return GeodesicPath(tuple(self.vertices[k] for k in p),
                            self.value(self._rows[p[0]][p[-1]]))

    def double_ray_proxy(self, eta, mu) -> GeodesicPath:
        if eta == mu:
            raise GraphError("double ray needs two distinct boundary proxies")
        return self.canonical_geodesic(eta, mu)

    def all_shortest_paths(self, i: int, j: int):
        """Every shortest path from i to j as index lists (exponential; small cases)."""
        rows, adj = self._rows, self.adj
        out = []

        def walk(v, acc):
            if v == j:
                out.append(list(acc))
                return
            rem = rows[v][j]
            for w, ln in adj[v]:
                if ln + rows[w][j] == rem:
                    acc.append(w)
                    walk(w, acc)
                    acc.pop()

        walk(i, [i])
        return out

    def path_units(self, path: Sequence[int]) -> int:
        return sum(self.edge_units(a, b) for a, b in zip(path, path[1:]))

    def check_path(self, path: Sequence[int]):
        for a, b in zip(path, path[1:]):
            if (min(a, b), max(a, b)) not in self.edge_lengths:
                raise GraphError(f"{self.vertices[a]!r} and {self.vertices[b]!r} are not adjacent")

    def dist_to_set(self, targets) -> np.ndarray:
        """Units distance from every vertex to the vertex set ``targets``."""
        t = list(targets)
        return self.D[:, t].min(axis=1)

    # hyperbolicity ---------------------------------------------------------

    @property
    def delta(self) -> Fraction:
        return self.delta_result.delta

    @property
    def delta_result(self) -> DeltaResult:
        if self._delta is None:
            self._delta = delta_thin_triangles(self)
        return self._delta

    def set_delta(self, result: DeltaResult):
        self._delta = result

    # serialization -----------------------------------------------------------

    def to_json(self):
        return {
            "vertices": list(self.vertices),
            "edges": [[self.vertices[a], self.vertices[b], str(ln)]
                      for (a, b), ln in self.edge_lengths.items()],
            "root": self.root,
            "horizon": str(self.horizon),
            "proxies": list(self.proxies),
        }

    @classmethod
    def from_json(cls, data):
        return cls(data["vertices"], [tuple(e) for e in data["edges"]], data["root"],
                   data.get("horizon", 0), data.get("proxies", ()))

    def induced(self, keep: Sequence[int], proxies=None) -> "HypGraphSpace":
        keep_set = set(keep)
        order = sorted(keep_set)
        verts = [self.vertices[k] for k in order]
        edges = [(self.vertices[a], self.vertices[b], ln)
                 for (a, b), ln in self.edge_lengths.items() if a in keep_set and b in keep_set]
        if proxies is None:
            proxies = [p for p in self.proxies if self.index[p] in keep_set]
        return HypGraphSpace(verts, edges, self.root, self.horizon, proxies)


def delta_thin_triangles(space: HypGraphSpace) -> DeltaResult:
    """Least delta such that every geodesic side of every vertex triangle lies in the
    closed delta-neighbourhood of the union of the other two sides, for every choice
    of geodesics.

    For a fixed side point p and third vertex y the adversary picks [x,y] and [y,z]
    independently, so the worst case is min(F_y(x, p), F_y(z, p)) where
    F_y(w, p) is the largest distance from p to any geodesic y -> w.  F_y is a
    bottleneck (max-min) path value on the shortest-path DAG from y, computed by
    dynamic programming in order of distance from y.
    """
    n = len(space)
    if space.is_tree():
        return DeltaResult(Fraction(0), None, "tree")
    D = space.D.astype(np.int64)
    X, Z, P = _interval_triples(D)
    best = -1
    witness = None
    for y in range(n):
        F = _bottleneck_from(space, D, y)
        vals = np.minimum(F[X, P], F[Z, P])
        k = int(np.argmax(vals))
        if vals[k] > best:
            best = int(vals[k])
            witness = (int(X[k]), y, int(Z[k]), int(P[k]))
    ids = tuple(space.vertices[k] for k in witness)
    return DeltaResult(space.value(best), ids, "exhaustive")


def _interval_triples(D: np.ndarray):
    """All (x, z, p) with x < z and p on some geodesic from x to z."""
    n = len(D)
    xs, zs, ps = [], [], []
    for x in range(n):
        # on[z, p]: d(x,p) + d(p,z) == d(x,z)
        on = (D[x][None, :] + D) == D[x][:, None]
        on[: x + 1, :] = False
        z, p = np.nonzero(on)
        xs.append(np.full(len(z), x, dtype=np.int32))
        zs.append(z.astype(np.int32))
        ps.append(p.astype(np.int32))
    return np.concatenate(xs), np.concatenate(zs), np.concatenate(ps)


def _bottleneck_from(space: HypGraphSpace, D: np.ndarray, y: int) -> np.ndarray:
    order = np.argsort(D[y], kind="stable")
    F = np.empty_like(D)
    dy = D[y]
    for v in order:
        if v == y:
            F[v] = D[v]
            continue
        acc = None
        for u, ln in space.adj[v]:
            if dy[u] + ln == dy[v]:
                acc = F[u] if acc is None else np.maximum(acc, F[u])
        F[v] = np.minimum(D[v], acc)
    return F


def quasi_geodesic_constants(path: Sequence, space: HypGraphSpace,
                             grid=GAMMA1_GRID) -> QuasiGeodesicConstants:
    """Least additive constant for each multiplicative constant on ``grid``.

    Pairs range over the vertices of the path with their arc-length positions.
    """
    idx = [space._idx(v) for v in path]
    space.check_path(idx)
    pos = np.zeros(len(idx), dtype=np.int64)
    for k in range(1, len(idx)):
        pos[k] = pos[k - 1] + space.edge_units(idx[k - 1], idx[k])
    arc = np.abs(pos[:, None] - pos[None, :])
    d = space.D[np.ix_(idx, idx)].astype(np.int64)
    frontier = {}
    for g in grid:
        g = Fraction(g)
        # gamma2 >= arc/g - d  and  gamma2 >= d - g*arc, in units*denominator
        lower = (arc * g.denominator - d * g.numerator).max()
        upper = (d * g.denominator - arc * g.numerator).max()
        c_lower = Fraction(int(lower), g.numerator)
        c_upper = Fraction(int(upper), g.denominator)
        frontier[g] = max(Fraction(0), c_lower, c_upper) / space.scale
    head = Fraction(2) if Fraction(2) in frontier else min(frontier)
    return QuasiGeodesicConstants(head, frontier[head], frontier)


def hausdorff_to_geodesic(path: Sequence, space: HypGraphSpace) -> Fraction:
    idx = [space._idx(v) for v in path]
    geo = space.canonical_path(idx[0], idx[-1])
    sub = space.D[np.ix_(idx, geo)]
    return space.value(max(sub.min(axis=1).max(), sub.min(axis=0).max()))


def additive_stretch(path_idx: Sequence[int], space: HypGraphSpace, pos=None) -> int:
    """max over vertex pairs of (arc length - distance), in units."""
    if pos is None:
        pos = np.zeros(len(path_idx), dtype=np.int64)
        for k in range(1, len(path_idx)):
            pos[k] = pos[k - 1] + space.edge_units(path_idx[k - 1], path_idx[k])
    pos = np.asarray(pos, dtype=np.int64)
    d = space.D[np.ix_(path_idx, path_idx)].astype(np.int64)
    return int((np.abs(pos[:, None] - pos[None, :]) - d).max())


def bracketing_check(space: HypGraphSpace, delta_units: int, triples=None):
    """Check (x,y)_z <= d(z,[x,y]) <= (x,y)_z + 2 delta with canonical [x,y].

    All pairs (x, y) and all z when ``triples`` is None, else the given index
    triples.  Works in doubled units so every comparison is an integer one.
    Returns (number checked, list of violations, max slack used).
    """
    D = space.D.astype(np.int64)
    n = len(space)
    violations = []
    checked = 0
    worst = 0
    if triples is None:
        for x in range(n):
            for y in range(x, n):
                path = space.canonical_path(x, y)
                dz = D[:, path].min(axis=1)
                twice_prod = D[:, x] + D[:, y] - D[x, y]
                lo = 2 * dz < twice_prod
                hi = 2 * dz > twice_prod + 4 * delta_units
                checked += n
                worst = max(worst, int((2 * dz - twice_prod).max()))
                for z in np.nonzero(lo | hi)[0]:
                    violations.append((x, y, int(z)))
    else:
        for x, y, z in triples:
            path = space.canonical_path(x, y)
            dz = min(D[z, p] for p in path)
            twice_prod = D[x, z] + D[y, z] - D[x, y]
            checked += 1
            worst = max(worst, int(2 * dz - twice_prod))
            if 2 * dz < twice_prod or 2 * dz > twice_prod + 4 * delta_units:
                violations.append((x, y, z))
    return checked, violations, Fraction(worst, 2 * space.scale)


def longest_avoiding_geodesic(space: HypGraphSpace, dist, radius):
    """Out-spread of the subgraph K induced by the vertices with ``dist <= radius``.

    ``dist`` holds the units distance of every vertex to some vertex set and
    ``radius`` is in units.  Geodesics live in the metric graph: a canonical
    geodesic through vertices outside K may be extended along an open edge
    ending in K when the extension is still a geodesic.  Returns the supremum
    of such lengths in units with the end vertices, or (0, None) when every
    vertex lies in K.
    """
    dist = np.asarray(dist)
    outside = dist > radius
    rows, adj = space._rows, space.adj

    def tails(u, v):
        # open edges w-u with w in K that extend the geodesic v..u beyond u
        return [(ln, w) for w, ln in adj[u] if not outside[w] and rows[w][v] == ln + rows[u][v]]

    def extension(u, v, base):
        # longest geodesic w..u..v..w' using at most one open edge at each end
        tu, tv = tails(u, v), tails(v, u)
        best_ext = max([ln for ln, _ in tu] + [ln for ln, _ in tv] + [0])
        for lu, wu in tu:
            for lv, wv in tv:
                if wu != wv and rows[wu][wv] == lu + base + lv:
                    best_ext = max(best_ext, lu + lv)
        return best_ext

    idx = np.nonzero(outside)[0]
    if len(idx) == 0:
        return 0, None
    best, ends = -1, None
    reach = 2 * space.max_edge_units()
    sub = space.D[np.ix_(idx, idx)]
    a, b = np.triu_indices(len(idx), 0)
    order = np.argsort(-sub[a, b], kind="stable")
    for k in order:
        base = int(sub[a[k], b[k]])
        if base + reach <= best:
            break
        u, v = int(idx[a[k]]), int(idx[b[k]])
        if not all(outside[w] for w in space.canonical_path(u, v)):
            continue
        total = base + extension(u, v, base)
        if total > best:
            best, ends = total, (space.vertices[u], space.vertices[v])
    return int(best), ends
