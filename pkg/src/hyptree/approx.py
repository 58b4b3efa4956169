"""Instance generators, hyperbolic approximations, boundary models and visual cores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .doubling import separated_net
from .hyp_graph import GraphError, HypGraphSpace, longest_avoiding_geodesic
from .metric_core import (
    FiniteMetricSpace,
    GromovProductTable,
    MetricError,
    VisualParams,
    sandwich_violations,
    visual_metric,
)


# point-set generators --------------------------------------------------------

def interval(n: int) -> FiniteMetricSpace:
    """n equally spaced points on [0, 1]."""
    if n < 1:
        raise MetricError("interval needs n >= 1")
    xs = [Fraction(0)] if n == 1 else [Fraction(k, n - 1) for k in range(n)]
    return _line_space(list(range(n)), xs)


def cantor(depth: int, ratio=Fraction(1, 3)) -> FiniteMetricSpace:
    """Left endpoints of the 2**depth intervals of the depth-th Cantor stage."""
    ratio = Fraction(ratio)
    if depth < 0 or not 0 < ratio < Fraction(1, 2):
        raise MetricError("cantor needs depth >= 0 and 0 < ratio < 1/2")
    lefts, width = [Fraction(0)], Fraction(1)
    for _ in range(depth):
        lefts = [a + off for a in lefts for off in (0, width * (1 - ratio))]
        width *= ratio
    return _line_space(list(range(len(lefts))), lefts)


def _line_space(ids, xs):
    scale = math.lcm(*(x.denominator for x in xs))
    ints = np.array([int(x * scale) for x in xs], dtype=np.int64)
    return FiniteMetricSpace(tuple(ids), np.abs(ints[:, None] - ints[None, :]), scale)


def grid(n: int) -> FiniteMetricSpace:
    """n x n integer grid with the max-norm metric (rational, bi-Lipschitz to Euclidean)."""
    if n < 1:
        raise MetricError("grid needs n >= 1")
    ij = np.array([(i, j) for i in range(n) for j in range(n)], dtype=np.int64)
    D = np.abs(ij[:, None, :] - ij[None, :, :]).max(axis=2)
    return FiniteMetricSpace(tuple(f"{i},{j}" for i, j in ij), D, 1)


def free_group_ball(rank: int, radius: int) -> HypGraphSpace:
    """Ball of the given radius in the Cayley graph of the free group (a tree).

    Vertices are reduced words ("e" for the identity, capital letters for
    inverses) in shortlex order; the sphere of the given radius are the proxies.
    """
    if rank < 1 or radius < 0 or rank > 13:
        raise MetricError("free_group_ball needs 1 <= rank <= 13 and radius >= 0")
    letters = []
    for k in range(rank):
        c = chr(ord("a") + k)
        letters += [c, c.upper()]
    inverse = {c: c.swapcase() for c in letters}
    words, edges = ["e"], []
    layer = ["e"]
    for _ in range(radius):
        nxt = []
        for w in layer:
            last = None if w == "e" else w[-1]
            for c in letters:
                if last is not None and inverse[c] == last:
                    continue
                child = c if w == "e" else w + c
                nxt.append(child)
                edges.append((w, child, 1))
        words += nxt
        layer = nxt
    return HypGraphSpace(words, edges, "e", radius, layer)


def with_pendant(space: HypGraphSpace, at, length: int, prefix: str = "pend") -> HypGraphSpace:
    """Attach a path of ``length`` unit edges at vertex ``at``; its vertices are not proxies."""
    if length < 1:
        raise GraphError("pendant length must be positive")
    names = [f"{prefix}:{k}" for k in range(1, length + 1)]
    edges = [(a, b, ln) for (a, b, ln) in space.to_json()["edges"]]
    chain = [at] + names
    edges += [(u, v, 1) for u, v in zip(chain, chain[1:])]
    return HypGraphSpace(list(space.vertices) + names, edges, space.root, space.horizon,
                         space.proxies)


def ladder(length: int, branch_at: int, branch_len: int) -> HypGraphSpace:
    """Two rails a0..aL, b0..bL joined by rungs, rooted at a0, plus a side path
    leaving b_{branch_at}.  Proxies: aL and the end of the side path.

    Vertex names make the lexicographic geodesic between the proxies run along
    the b-rail, so it meets the tree ray a0..aL only at aL.
    """
    if not 0 < branch_at < length or branch_len < 1:
        raise GraphError("ladder needs 0 < branch_at < length and branch_len >= 1")
    side = [f"c{k:03d}" for k in range(1, branch_len + 1)]
    rail_a = [f"a{k:03d}" for k in range(length + 1)]
    rail_b = [f"b{k:03d}" for k in range(length + 1)]
    # vertex order: side, b-rail, a-rail, so b-vertices precede a-vertices
    verts = side + rail_b + rail_a
    edges = [(rail_a[k], rail_a[k + 1], 1) for k in range(length)]
    edges += [(rail_b[k], rail_b[k + 1], 1) for k in range(length)]
    edges += [(rail_a[k], rail_b[k], 1) for k in range(length + 1)]
    chain = [rail_b[branch_at]] + side
    edges += [(u, v, 1) for u, v in zip(chain, chain[1:])]
    g = HypGraphSpace(verts, edges, rail_a[0], 0, [])
    horizon = min(g.dist(rail_a[0], rail_a[-1]), g.dist(rail_a[0], side[-1]))
    return HypGraphSpace(verts, edges, rail_a[0], horizon, [rail_a[-1], side[-1]])


# hyperbolic approximation ----------------------------------------------------

@dataclass
class HyperbolicApproximation:
    X: FiniteMetricSpace
    levels: int
    scale_unit: Fraction
    nets: list  # level -> point indices of X
    graph: HypGraphSpace
    identification: dict  # deepest-level vertex id -> point id of X
    max_degree: int

    @property
    def root(self):
        return self.graph.root


def vertex_name(k: int, point) -> str:
    return f"{k}:{point}"


def default_levels(X: FiniteMetricSpace) -> int:
    """Least J with 2^-J * diam < (min pairwise distance) / 2, so the deepest net is all of X."""
    if len(X) < 2:
        return 0
    ratio = X.diameter() / X.min_distance()
    J = 0
    while Fraction(1, 2**J) * ratio >= Fraction(1, 2):
        J += 1
    return J


def build_hyperbolic_approximation(X: FiniteMetricSpace, levels: int | None = None) -> HyperbolicApproximation:
    """Level graph over nested nets of X.

    Level k is a maximal (2^-k s)-separated net containing level k-1, with
    s = diam X.  Same-level vertices are joined when d <= 4 * 2^-k s, vertices
    of consecutive levels when d <= 3 * 2^-(k+1) s.  All edges have length 1.
    """
    if len(X) == 0:
        raise MetricError("cannot approximate an empty space")
    if levels is None:
        levels = default_levels(X)
    if levels < 0:
        raise MetricError("levels must be >= 0")
    s = X.diameter() if len(X) > 1 else Fraction(1)
    if not X.exact:
        raise MetricError("hyperbolic approximation needs an exact metric")
    nets = []
    prev: list[int] = []
    for k in range(levels + 1):
        prev = separated_net(X, s / 2**k, prev)
        nets.append(prev)
    names, edges = [], []
    for k, net in enumerate(nets):
        names += [vertex_name(k, X.points[p]) for p in net]
        near = X.mask_le(4 * s / 2**k)
        for a_pos, a in enumerate(net):
            for b in net[a_pos + 1:]:
                if near[a, b]:
                    edges.append((vertex_name(k, X.points[a]), vertex_name(k, X.points[b]), 1))
        if k + 1 < len(nets):
            down = X.mask_le(3 * s / 2 ** (k + 1))
            for a in net:
                for b in nets[k + 1]:
                    if down[a, b]:
                        edges.append((vertex_name(k, X.points[a]), vertex_name(k + 1, X.points[b]), 1))
    root = vertex_name(0, X.points[nets[0][0]])
    deepest = [vertex_name(levels, X.points[p]) for p in nets[-1]]
    graph = HypGraphSpace(names, edges, root, levels, deepest)
    ident = {vertex_name(levels, X.points[p]): X.points[p] for p in nets[-1]}
    degree = max(len(a) for a in graph.adj)
    return HyperbolicApproximation(X, levels, s, nets, graph, ident, degree)


def monotone_descent_ok(H: HyperbolicApproximation) -> bool:
    """Every vertex above the deepest level has an edge to the next level."""
    g = H.graph
    for k, net in enumerate(H.nets[:-1]):
        for p in net:
            i = g.index[vertex_name(k, H.X.points[p])]
            if not any(g.vertices[w].startswith(f"{k + 1}:") for w, _ in g.adj[i]):
                return False
    return True


# boundary models -------------------------------------------------------------

@dataclass
class BoundaryModel:
    proxies: tuple  # vertex ids
    proxy_idx: list  # vertex indices in the space
    metric: FiniteMetricSpace  # d_h on the proxies (points are the proxy ids)
    mode: str  # "A": transported original metric, "B": visual metric
    params: VisualParams
    products: GromovProductTable  # basepoint = root, points = proxies
    visual: np.ndarray  # visual-metric table (always computed)
    sandwich_violations: list

    def __len__(self):
        return len(self.proxies)

    def to_json(self):
        return {
            "mode": self.mode,
            "epsilon": repr(self.params.epsilon),
            "delta": repr(self.params.delta),
            "epsilon_prime": repr(self.params.epsilon_prime),
            "proxies": list(self.proxies),
            "metric": self.metric.to_json(),
        }


def proxy_products(space: HypGraphSpace, proxy_idx) -> GromovProductTable:
    D = space.D.astype(np.int64)
    sub = D[np.ix_(proxy_idx, proxy_idx)]
    row = D[space.r, proxy_idx]
    twice = row[:, None] + row[None, :] - sub
    points = tuple(space.vertices[p] for p in proxy_idx)
    return GromovProductTable(space.root, points, twice / (2.0 * space.scale), twice, space.scale)


def boundary_model(space: HypGraphSpace, params: VisualParams, mode: str = "B",
                   base_metric: FiniteMetricSpace | None = None,
                   identification: dict | None = None) -> BoundaryModel:
    """Boundary proxies of ``space`` with their boundary metric.

    Mode "B" uses the visual metric over the proxies.  Mode "A" transports
    ``base_metric`` through ``identification`` (proxy id -> point id).
    """
    if params.delta > 0 and math.exp(params.epsilon * params.delta) > math.sqrt(2) + 1e-9:
        raise MetricError("non-admissible visual parameters")
    proxies = tuple(space.proxies)
    pidx = list(space.proxy_idx)
    products = proxy_products(space, pidx)
    _, table = visual_metric(products, params)
    bad = sandwich_violations(products, params, list(range(len(pidx))), table)
    if mode == "A":
        if base_metric is None or identification is None:
            raise MetricError("mode A needs the original metric and the identification")
        sub = [base_metric.index(identification[p]) for p in proxies]
        units = base_metric.units[np.ix_(sub, sub)].copy()
        metric = FiniteMetricSpace(proxies, units, base_metric.scale)
    elif mode == "B":
        metric = FiniteMetricSpace(proxies, table, 1)
    else:
        raise MetricError(f"unknown boundary mode {mode!r}")
    return BoundaryModel(proxies, pidx, metric, mode, params, products, table, bad)


def boundary_from_json(space: HypGraphSpace, data) -> BoundaryModel:
    """Inverse of ``BoundaryModel.to_json`` given the ambient space."""
    params = VisualParams(float(data["epsilon"]), float(data["delta"]), float(data["epsilon_prime"]))
    proxies = tuple(data["proxies"])
    if proxies != tuple(space.proxies):
        raise MetricError("boundary proxies do not match the space")
    pidx = list(space.proxy_idx)
    products = proxy_products(space, pidx)
    _, table = visual_metric(products, params)
    bad = sandwich_violations(products, params, list(range(len(pidx))), table)
    metric = FiniteMetricSpace.from_json(data["metric"])
    if data["mode"] == "B":
        metric = FiniteMetricSpace(proxies, table, 1)
    return BoundaryModel(proxies, pidx, metric, data["mode"], params, products, table, bad)


def approximation_boundary(H: HyperbolicApproximation, params: VisualParams, mode: str = "A"):
    return boundary_model(H.graph, params, mode, H.X, H.identification)


def snowflake_comparison(boundary: BoundaryModel):
    """Fit d_B ~ c * d_A^theta on all pairs; returns (theta, max ratio d_B / d_A^theta spread)."""
    n = len(boundary)
    if n < 2:
        return None
    iu = np.triu_indices(n, 1)
    a = boundary.metric.units[iu] / boundary.metric.scale
    b = boundary.visual[iu]
    la, lb = np.log(a.astype(float)), np.log(b)
    if np.ptp(la) == 0:
        theta = 1.0
    else:
        theta = float(np.polyfit(la, lb, 1)[0])
    ratio = b / a.astype(float) ** theta
    return theta, float(ratio.max() / ratio.min())


# visuality and visual cores --------------------------------------------------

@dataclass(frozen=True)
class VisualityCertificate:
    D: Fraction
    witnesses: dict  # vertex id -> proxy id


def visuality_certificate(space: HypGraphSpace, boundary: BoundaryModel) -> VisualityCertificate:
    """D = max over vertices of d(o,x) - max over proxies (x, eta)_o (at least 0)."""
    Dm = space.D.astype(np.int64)
    r = space.r
    pidx = boundary.proxy_idx
    if not pidx:
        raise GraphError("no boundary proxies")
    # doubled units: 2 (x, eta)_o
    twice = Dm[r][:, None] + Dm[r, pidx][None, :] - Dm[:, pidx]
    best = twice.argmax(axis=1)
    gap = 2 * Dm[r] - twice[np.arange(len(space)), best]
    D = Fraction(max(0, int(gap.max())), 2 * space.scale)
    wit = {space.vertices[x]: space.vertices[pidx[best[x]]] for x in range(len(space))}
    return VisualityCertificate(D, wit)


@dataclass
class VisualCore:
    space: HypGraphSpace
    kept: list  # vertex indices of the ambient space
    budget: Fraction
    outspread: Fraction  # longest canonical ambient geodesic avoiding the core
    outspread_ends: tuple | None


def visual_core(space: HypGraphSpace, boundary: BoundaryModel, budget) -> VisualCore:
    """Vertices within ``budget`` of some canonical root-to-proxy geodesic."""
    budget = Fraction(budget)
    if budget < 0:
        raise GraphError("budget must be >= 0")
    spine = set()
    for p in boundary.proxy_idx:
        spine.update(space.canonical_path(space.r, p))
    dist = space.dist_to_set(sorted(spine))
    radius = math.floor(budget * space.scale)
    kept = [int(k) for k in np.nonzero(dist <= radius)[0]]
    core = space.induced(kept, proxies=boundary.proxies)
    length, ends = longest_avoiding_geodesic(space, dist, radius)
    return VisualCore(core, kept, budget, space.value(length), ends)
