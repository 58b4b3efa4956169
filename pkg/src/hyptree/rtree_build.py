"""Stage-by-stage construction of a rooted tree of quasi-geodetic rays.

Boundary points are the proxies of a ``BoundaryModel`` and are addressed by
their position in ``boundary.proxies``.  Tree nodes are vertex indices of the
ambient ``HypGraphSpace``; every tree edge is an edge of the space.

Stage j (j >= 1) does the following:

* pick scale eps_j = eps_{j-1} / (512 N^2);
* cover the boundary by closed balls of radius eps_{j-1}/64 (``ls23_cover``),
  whose centers Y_j contain S_{j-1};
* grow S_j from Y_j to an eps_j-separated set whose open eps_j balls cover;
* attach a ray to every new point of S_j, either along the double ray R to a
  nearby old point (case A) or through a short connector to the tree (case B).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .approx import BoundaryModel
from .doubling import CoverBoundError, CoverFamily, doubling_constant, ls23_cover
from .hyp_graph import HypGraphSpace
from .metric_core import FLOAT_TOL, MetricError, compute_beta

MAX_RETRIES = 3


class ConstructionError(MetricError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class StageError(ConstructionError):
    """A stage invariant could not be met; usually N is too small."""


class ConnectorError(ConstructionError):
    """No connector of length <= delta inside the search ball."""


def exp_bound(N: int, base_exponent) -> int:
    """floor(N ** log2(base_exponent)), exact when N is a power of two."""
    e = math.log2(base_exponent)
    if N >= 1 and (N & (N - 1)) == 0 and float(e).is_integer():
        return N ** int(e)
    return math.floor(N ** e + 1e-9)


def fiber_bound(N: int) -> int:
    """N^2 * N^log2(8 N^2), the bound on rays per boundary point."""
    return N * N * exp_bound(N, 8 * N * N)


def stretch_bound(N: int, delta, beta) -> float:
    """(M + 1)(75 delta + 4 beta) with M = N^2 N^log2(8N^2)."""
    return (fiber_bound(N) + 1) * (75 * float(delta) + 4 * float(beta))


# schedule --------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleSchedule:
    N: int
    epsilons: tuple  # eps_0 > eps_1 > ...
    requested: int | None  # None: run to saturation
    truncated: bool  # the list stops early because eps_J fell below the minimum distance

    @property
    def ratio(self) -> int:
        return 512 * self.N * self.N

    @property
    def J(self) -> int:
        return len(self.epsilons) - 1

    def q(self, j: int):
        """eps_{j-1} / eps_j."""
        return self.ratio


def make_schedule(boundary: BoundaryModel, N: int, J: int | None = None, base: int = 0) -> ScaleSchedule:
    """eps_0 = max distance from the base point, then divide by 512 N^2 per stage.

    The list ends at the first eps_j not exceeding the minimum boundary
    distance (from there on S_j is every proxy), or at J when that comes first.
    """
    metric = boundary.metric
    if len(metric) == 0:
        raise ConstructionError("empty boundary")
    if N < 1:
        raise ConstructionError("N must be >= 1")
    if J is not None and J < 0:
        raise ConstructionError("J must be >= 0")
    eps0 = metric.value(metric.units[base].max())
    eps = [eps0]
    truncated = False
    if len(metric) > 1:
        dmin = metric.min_distance()
        ratio = 512 * N * N
        while J is None or len(eps) <= J:
            if len(eps) > 1 and eps[-1] <= dmin:
                truncated = J is not None
                break
            eps.append(eps[-1] / ratio)
    return ScaleSchedule(N, tuple(eps), J, truncated)


# the tree --------------------------------------------------------------------

@dataclass
class AttachRecord:
    stage: int
    order: int  # position in the stage's attachment order
    class_index: int
    class_rank: int
    target: int  # boundary position
    anchor: int  # boundary position in S_{j-1}
    case: str  # "A" or "B"
    x_P: int  # vertex index
    attach_vertex: int  # tree vertex the new piece hangs from
    x_R: int
    connector: tuple  # vertex indices from x_R to the tree (length 0: single vertex)
    subray: tuple  # vertex indices from the attach point to the target
    connector_units: int = 0
    fallback: bool = False
    claim1_units: int = 0
    connected_to: int = -1
    eventually_connected_to: int = -1
    claim3_direct: bool = True
    claim3: bool = True

    def to_json(self, space: HypGraphSpace, boundary: BoundaryModel):
        v = space.vertices
        px = boundary.proxies
        return {
            "stage": self.stage,
            "order": self.order,
            "class": self.class_index,
            "rank": self.class_rank,
            "target": px[self.target],
            "anchor": px[self.anchor],
            "case": self.case,
            "x_P": v[self.x_P],
            "attach": v[self.attach_vertex],
            "x_R": v[self.x_R],
            "connector": [v[k] for k in self.connector],
            "connector_length": str(space.value(self.connector_units)),
            "subray": [v[k] for k in self.subray],
            "fallback": self.fallback,
            "claim1_distance": str(space.value(self.claim1_units)),
            "connected_to": px[self.connected_to],
            "eventually_connected_to": px[self.eventually_connected_to],
            "claim3_direct": self.claim3_direct,
            "claim3": self.claim3,
        }


class RTree:
    """Rooted subtree of the ambient graph grown by attaching paths."""

    def __init__(self, space: HypGraphSpace):
        self.space = space
        self.root = space.r
        self.parent = {space.r: None}
        self.depth = {space.r: 0}  # tree distance to the root, units
        self.hops = {space.r: 0}
        self.stage = {space.r: 0}
        self.owner = {space.r: -1}  # attach record index, -1 for the base ray
        self.role = {space.r: "ray"}
        self.children = {space.r: []}
        self.order = [space.r]
        self.ray_end = {}  # boundary position -> vertex
        self.attach_log: list[AttachRecord] = []
        self.base_target = None
        self.schedule: ScaleSchedule | None = None
        self.stages: list = []
        self.N = None
        self.N_history: list = []
        self.delta_units = 0
        self.delta_eff_units = 0

    def __contains__(self, v):
        return v in self.parent

    def __len__(self):
        return len(self.parent)

    def add_chain(self, chain, owner: int, stage: int, roles=None):
        """Hang ``chain[1:]`` below ``chain[0]`` (which must already be in the tree)."""
        if chain[0] not in self.parent:
            raise ConstructionError("chain does not start in the tree")
        for k in range(1, len(chain)):
            a, b = chain[k - 1], chain[k]
            if b in self.parent:
                raise ConstructionError(f"cycle: {self.space.vertices[b]!r} already in the tree",
                                        self.space.vertices[b])
            self.parent[b] = a
            self.depth[b] = self.depth[a] + self.space.edge_units(a, b)
            self.hops[b] = self.hops[a] + 1
            self.stage[b] = stage
            self.owner[b] = owner
            self.role[b] = "ray" if roles is None else roles[k]
            self.children[b] = []
            self.children[a].append(b)
            self.order.append(b)

    def path_to_root(self, v) -> list:
        out = [v]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out

    def ray(self, v) -> list:
        """Tree path from the root to v."""
        return self.path_to_root(v)[::-1]

    def tree_dist(self, u, v) -> int:
        a, b = u, v
        while self.hops[a] > self.hops[b]:
            a = self.parent[a]
        while self.hops[b] > self.hops[a]:
            b = self.parent[b]
        while a != b:
            a, b = self.parent[a], self.parent[b]
        return self.depth[u] + self.depth[v] - 2 * self.depth[a]

    def edges(self):
        return [(self.parent[v], v) for v in self.order if self.parent[v] is not None]

    def leaves(self):
        return [v for v in self.order if not self.children[v] and v != self.root]

    def leaf_targets(self) -> dict:
        end_to_target = {v: t for t, v in self.ray_end.items()}
        return {v: end_to_target.get(v) for v in self.leaves()}

    def distance_matrix(self):
        """All-pairs tree distances (units) over ``self.order``."""
        pos = {v: k for k, v in enumerate(self.order)}
        n = len(self.order)
        e = self.edges()
        if not e:
            return self.order, np.zeros((1, 1), dtype=np.int64)
        rows = [pos[a] for a, _ in e]
        cols = [pos[b] for _, b in e]
        w = [self.space.edge_units(a, b) for a, b in e]
        A = csr_matrix((w, (rows, cols)), shape=(n, n))
        D = shortest_path(A, method="D", directed=False)
        return self.order, np.rint(D).astype(np.int64)

    def to_json(self, boundary: BoundaryModel):
        v = self.space.vertices
        px = boundary.proxies
        return {
            "root": v[self.root],
            "nodes": [v[k] for k in self.order],
            "edges": [[v[a], v[b], self.stage[b]] for a, b in self.edges()],
            "rays": {px[t]: v[e] for t, e in sorted(self.ray_end.items())},
            "leafTargets": {v[leaf]: (None if t is None else px[t])
                            for leaf, t in self.leaf_targets().items()},
            "N": self.N,
            "N_history": list(self.N_history),
            "epsilons": [str(e) for e in self.schedule.epsilons] if self.schedule else [],
            "stages": [s.to_json(boundary) for s in self.stages],
            "attachLog": [r.to_json(self.space, boundary) for r in self.attach_log],
        }

    def to_dot(self) -> str:
        palette = ["black", "red", "blue", "darkgreen", "orange", "purple", "brown", "cyan"]
        v = self.space.vertices
        lines = ["digraph rtree {", "  node [shape=point];"]
        lines.append(f'  "{v[self.root]}" [shape=circle, label="root"];')
        for a, b in self.edges():
            s = self.stage[b]
            color = palette[s % len(palette)]
            style = ', style=dashed' if self.role[b] == "connector" else ""
            lines.append(f'  "{v[a]}" -> "{v[b]}" [color={color}, label="{s}"{style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


# stages ----------------------------------------------------------------------

@dataclass
class StageState:
    j: int
    epsilon: object
    S: list  # boundary positions, in order of inclusion
    Y: list
    cover: CoverFamily | None  # None at j = 0 (the single ball "whole boundary")
    new: list = field(default_factory=list)  # (position, class, rank) in attachment order
    Q: int | None = None  # units of the ambient space
    q: int | None = None
    beta: float | None = None
    pairs_in_range: int = 0
    checks: dict = field(default_factory=dict)  # name -> bool
    details: dict = field(default_factory=dict)
    star: dict = field(default_factory=dict)

    def to_json(self, boundary: BoundaryModel):
        px = boundary.proxies
        return {
            "j": self.j,
            "epsilon": str(self.epsilon),
            "S": [px[p] for p in self.S],
            "Y": [px[p] for p in self.Y],
            "new": [[px[p], c, k] for p, c, k in self.new],
            "Q": self.Q,
            "q": self.q,
            "beta": None if self.beta is None else repr(self.beta),
            "pairs_in_range": self.pairs_in_range,
            "cover": None if self.cover is None else self.cover.to_json(),
            "checks": dict(sorted(self.checks.items())),
            "details": {k: _jsonable(v) for k, v in sorted(self.details.items())},
            "star": {k: _jsonable(v) for k, v in sorted(self.star.items())},
        }


def _jsonable(x):
    if isinstance(x, (Fraction, np.integer, np.floating)):
        return str(x) if isinstance(x, Fraction) else x.item()
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    return x


def initial_stage(boundary: BoundaryModel, schedule: ScaleSchedule, base: int = 0) -> StageState:
    return StageState(0, schedule.epsilons[0], [base], [base], None)


def stage_sets(boundary: BoundaryModel, schedule: ScaleSchedule, j: int,
               previous: StageState) -> StageState:
    """Cover, centers and separated set of stage j, with every invariant checked."""
    metric = boundary.metric
    N = schedule.N
    eps_prev, eps = schedule.epsilons[j - 1], schedule.epsilons[j]
    r = eps_prev / 64
    cover = ls23_cover(metric, r, previous.S, N)  # raises CoverBoundError
    Y = [int(c) for c in cover.centers]

    D = metric.units
    sep = metric.ge_threshold(eps)
    near = metric.mask_le(eps_prev / 16)
    bound_d = exp_bound(N, 8 * N)
    S = list(Y)
    count = near[:, S].sum(axis=1)
    ok = np.ones(len(metric), dtype=bool)
    for s in S:
        ok &= D[s] >= sep
    rejected = []
    for p in range(len(metric)):
        if not ok[p]:
            continue
        if (count + near[:, p]).max() > bound_d:
            rejected.append(p)
            continue
        S.append(p)
        count += near[:, p]
        ok &= D[p] >= sep

    state = StageState(j, eps, S, Y, cover)
    checks, details = state.checks, state.details
    Sset, Yset = set(S), set(Y)
    checks["a_ratio"] = eps_prev == eps * schedule.ratio if metric.exact else \
        abs(eps_prev - eps * schedule.ratio) <= FLOAT_TOL * max(1.0, float(eps_prev))
    checks["b_nested"] = set(previous.S) <= Yset <= Sset
    subS = D[np.ix_(S, S)]
    offS = ~np.eye(len(S), dtype=bool)
    checks["c_separated"] = bool((subS[offS] >= sep).all())
    mult_d = int(near[:, S].sum(axis=1).max())
    checks["d_multiplicity"] = mult_d <= bound_d
    details["d_multiplicity"] = (mult_d, bound_d)
    subY = D[np.ix_(Y, Y)]
    offY = ~np.eye(len(Y), dtype=bool)
    checks["e_centers_separated"] = bool((subY[offY] >= metric.ge_threshold(r)).all())
    covered = metric.mask_lt(eps)[:, S].any(axis=1)
    checks["f_open_cover"] = bool(covered.all())
    prof = cover.profile()
    checks["g_family_multiplicity"] = prof.family_multiplicity <= N * N
    checks["h_center_multiplicity"] = max(prof.per_center_3r, default=0) <= N * N
    details["g_family_multiplicity"] = prof.family_multiplicity
    details["h_center_multiplicity"] = max(prof.per_center_3r, default=0)
    details["color_classes"] = len(cover.color_classes)
    details["rejected"] = len(rejected)
    if not checks["f_open_cover"]:
        x = int(np.nonzero(~covered)[0][0])
        raise StageError(f"stage {j}: open eps_j-balls miss {boundary.proxies[x]!r} "
                         f"after {len(rejected)} rejections for multiplicity", boundary.proxies[x])
    failed = [k for k, v in checks.items() if not v]
    if failed:
        raise StageError(f"stage {j}: invariants {failed} fail", failed)
    return state


def _ball_distances(metric, cover: CoverFamily | None) -> np.ndarray:
    """dist[x, m] from every boundary point to member m of the cover (units)."""
    if cover is None:
        return np.zeros((len(metric), 1), dtype=metric.units.dtype)
    out = np.empty((len(metric), len(cover.centers)), dtype=metric.units.dtype)
    for m in range(len(cover.centers)):
        out[:, m] = metric.units[:, cover.members[:, m]].min(axis=1)
    return out


def order_new_points(new, prev_cover: CoverFamily | None, schedule: ScaleSchedule, j: int,
                     metric) -> list:
    """Classes by multiplicity in the previous cover, interleaved by rank.

    Class i holds the points whose (i * 8 eps_{j-1})-multiplicity in the
    previous cover is at most i (and no smaller class fits).  The attachment
    order takes the first point of every class, then the second of every
    class, and so on.  Returns (position, class, rank) triples.
    """
    N = schedule.N
    eps_prev = schedule.epsilons[j - 1]
    dist = _ball_distances(metric, prev_cover)
    classes: dict[int, list] = {}
    for p in new:
        for i in range(1, N * N + 1):
            mult = int((dist[p] <= metric.le_threshold(i * 8 * eps_prev)).sum())
            if mult <= i:
                classes.setdefault(i, []).append(p)
                break
        else:
            raise StageError(f"stage {j}: point {metric.points[p]!r} fits no class <= N^2",
                             metric.points[p])
    out = []
    longest = max((len(v) for v in classes.values()), default=0)
    for k in range(longest):
        for i in sorted(classes):
            if k < len(classes[i]):
                out.append((classes[i][k], i, k + 1))
    return out


def compute_Q_q(space: HypGraphSpace, boundary: BoundaryModel, schedule: ScaleSchedule, j: int):
    """Largest and least distance (units) from the root to a canonical double ray
    between proxies at boundary distance in [eps_j, eps_{j-1}].

    Returns (Q, q, number of pairs) or (None, None, 0) when no pair qualifies.
    """
    metric = boundary.metric
    lo = metric.ge_threshold(schedule.epsilons[j])
    hi = metric.le_threshold(schedule.epsilons[j - 1])
    D = metric.units
    a, b = np.nonzero(np.triu((D >= lo) & (D <= hi), 1))
    if len(a) == 0:
        return None, None, 0
    rows = space._rows
    root_row = rows[space.r]
    pidx = boundary.proxy_idx
    Q, q = -1, None
    for x, y in zip(a.tolist(), b.tolist()):
        d = min(root_row[v] for v in space.canonical_path(pidx[x], pidx[y]))
        Q = max(Q, d)
        q = d if q is None else min(q, d)
    return Q, q, len(a)


def delta_eff_units(space: HypGraphSpace, delta_units: int) -> int:
    """Least realized distance >= delta (delta itself when realized)."""
    if delta_units == 0:
        return 0
    D = space.D
    cand = D[D >= delta_units]
    return int(cand.min()) if cand.size else int(delta_units)


# attachment ------------------------------------------------------------------

def _first_in_tree(tree: RTree, path):
    for k, v in enumerate(path):
        if v in tree:
            return k
    return None


def attach_ray(tree: RTree, target: int, anchor: int, Q: int, boundary: BoundaryModel,
               stage: int, order: int = 0, class_index: int = 1, class_rank: int = 1) -> AttachRecord:
    """Attach a ray to boundary position ``target`` next to the ray of ``anchor``."""
    sp = tree.space
    rows = sp._rows
    r = sp.r
    delta = tree.delta_units
    t_v = boundary.proxy_idx[target]
    a_v = tree.ray_end[anchor]
    R = sp.canonical_path(t_v, a_v)  # from the new point to the anchor
    owner = len(tree.attach_log)
    near = Q + 5 * delta
    common = [k for k, v in enumerate(R) if v in tree]
    case_a = any(rows[r][R[k]] <= near for k in common)
    fallback = False
    rec = None
    if not case_a:
        rec = _case_b(tree, R, anchor, Q, stage, owner)
        if rec is None:
            fallback = True
    if rec is None:
        k = common[0]
        x = R[k]
        chain = R[k::-1]  # x, ..., target
        tree.add_chain(chain, owner, stage)
        rec = AttachRecord(stage, order, class_index, class_rank, target, anchor, "A", x, x, x,
                           (x,), tuple(chain), fallback=fallback)
    rec.order, rec.class_index, rec.class_rank = order, class_index, class_rank
    rec.target, rec.anchor = target, anchor
    tree.ray_end[target] = t_v
    # Claim 1: tree distance from R to x_P
    on_R = [v for v in R if v in tree]
    rec.claim1_units = min(tree.tree_dist(v, rec.x_P) for v in on_R)
    tree.attach_log.append(rec)
    return rec


def _case_b(tree: RTree, R, anchor: int, Q: int, stage: int, owner: int):
    sp = tree.space
    rows = sp._rows
    r = sp.r
    delta = tree.delta_units
    reach = tree.delta_eff_units
    near, far = Q + 5 * delta, Q + 6 * delta
    ray = tree.ray(tree.ray_end[anchor])
    inner = [k for k, v in enumerate(ray) if rows[r][v] < near]
    P = ray[(inner[-1] + 1 if inner else 0):]
    if not P:
        raise ConnectorError("tree ray to the anchor never leaves the ball of radius Q+5delta")
    x_P = P[0]
    posR = [0]
    for a, b in zip(R, R[1:]):
        posR.append(posR[-1] + sp.edge_units(a, b))
    posP = [0]
    for a, b in zip(P, P[1:]):
        posP.append(posP[-1] + sp.edge_units(a, b))
    z = min(range(len(R)), key=lambda k: (rows[r][R[k]], k))  # point of R closest to r
    best = None
    for ui, u in enumerate(R):
        if rows[r][u] > far:
            continue
        for pk, p in enumerate(P):
            d = rows[u][p]
            if d > reach or rows[r][p] > far:
                continue
            along = abs(posR[ui] - posR[z]) + d + posP[pk]
            key = (d, along, ui, pk)
            if best is not None and key >= best[0]:
                continue
            geo = sp.canonical_path(u, p)
            if all(rows[r][w] <= far for w in geo):
                best = (key, geo)
    if best is None:
        raise ConnectorError(
            f"no connector of length <= {sp.value(reach)} from the double ray "
            f"{sp.vertices[R[0]]!r}..{sp.vertices[R[-1]]!r} to the tree inside radius Q+6delta",
            (sp.vertices[R[0]], sp.vertices[R[-1]]))
    geo = best[1]
    # smallest connected piece of geo holding a point of R and a point of the tree
    Rset = set(R)
    seg, seg_len = None, None
    last_r = last_t = None
    for idx, w in enumerate(geo):
        if w in tree:
            last_t = idx
            if last_r is not None:
                cand = (last_r, idx)
                ln = rows[geo[last_r]][w]
                if seg is None or ln < seg_len:
                    seg, seg_len = cand, ln
        if w in Rset:
            last_r = idx
            if last_t is not None:
                cand = (idx, last_t)
                ln = rows[w][geo[last_t]]
                if seg is None or ln < seg_len:
                    seg, seg_len = cand, ln
    i_r, i_t = seg
    connector = geo[i_r:i_t + 1] if i_t >= i_r else geo[i_t:i_r + 1][::-1]
    x_R, t = connector[0], connector[-1]
    xr = R.index(x_R)
    sub = R[:xr]  # target ... (just before x_R)
    if any(v in tree for v in sub) or (x_R != t and x_R in tree):
        return None  # the ray re-enters the tree farther out; fall back to case A
    chain = list(connector[::-1])  # t ... x_R
    roles = ["connector"] * len(chain)
    roles[-1] = "ray"
    if len(chain) > 1:
        tree.add_chain(chain, owner, stage, roles)
    tail = [x_R] + sub[::-1]
    tree.add_chain(tail, owner, stage)
    return AttachRecord(stage, 0, 1, 1, -1, -1, "B", x_P, t, x_R, tuple(connector),
                        tuple(tail), connector_units=sp.path_units(connector))


# connections -----------------------------------------------------------------

def connect_target(tree: RTree, records, attach_vertex, target: int, metric) -> int:
    """Boundary point that a ray hanging from ``attach_vertex`` is connected to."""
    own = tree.owner[attach_vertex]
    if own == -1:
        return tree.base_target
    rec = records[own]
    if tree.role[attach_vertex] == "ray":
        cands = [rec.target, rec.anchor]
    else:
        cands = [rec.target]
        seen = {rec.target}
        cur = rec
        while cur.connected_to not in seen and cur.connected_to >= 0:
            seen.add(cur.connected_to)
            cands.append(cur.connected_to)
            nxt = [x for x in records if x.target == cur.connected_to]
            if not nxt:
                break
            cur = nxt[0]
    D = metric.units
    return min(cands, key=lambda c: (D[c, target], c))


def track_connections(records, previous_S, metric, N: int, eps_prev) -> dict:
    """Eventual targets in S_{j-1} for every record of one stage.

    Follows the connected relation until it lands in S_{j-1}; a cycle is a
    construction bug.  Also sets the Claim 3 flags on the records.
    """
    prev = set(previous_S)
    by_target = {rec.target: rec for rec in records}
    out = {}
    direct = metric.le_threshold(8 * eps_prev)
    bound = metric.le_threshold(16 * N * N * eps_prev)
    for rec in records:
        seen = [rec.target]
        cur = rec.connected_to
        while cur not in prev:
            if cur in seen:
                raise ConstructionError("cycle in the connected relation", [metric.points[c] for c in seen])
            seen.append(cur)
            if cur not in by_target:
                raise ConstructionError(f"{metric.points[cur]!r} is neither old nor attached this stage")
            cur = by_target[cur].connected_to
        rec.eventually_connected_to = cur
        rec.claim3_direct = bool(metric.units[rec.connected_to, rec.target] <= direct)
        rec.claim3 = bool(metric.units[cur, rec.target] <= bound)
        out[rec.target] = cur
    return out


def claim2_violations(state: StageState, prev_cover, schedule: ScaleSchedule, metric):
    """Pairs (k, l) in one class within 8 eps_{j-1} breaking the ball-inclusion claim."""
    if prev_cover is None or not state.new:
        return []
    eps_prev = schedule.epsilons[state.j - 1]
    dist = _ball_distances(metric, prev_cover)
    close = metric.le_threshold(8 * eps_prev)
    out = []
    by_class: dict[int, list] = {}
    for p, c, _ in state.new:
        by_class.setdefault(c, []).append(p)
    for n, pts in by_class.items():
        A = dist[pts] <= metric.le_threshold(n * 8 * eps_prev)
        bad = (A.astype(np.int32) @ (~A).T.astype(np.int32)) > 0
        pair_close = metric.units[np.ix_(pts, pts)] <= close
        for a, b in zip(*np.nonzero(bad & pair_close)):
            out.append((pts[a], pts[b]))
    return out


def star_bookkeeping(state: StageState, prev: StageState, eventual: dict, N: int) -> dict:
    """Per-ball counts of eventual targets, their previous balls, and sources."""
    cover = state.cover
    prev_cover = prev.cover
    new = [p for p, _, _ in state.new]
    bound_pts = exp_bound(N, 8 * N * N)

    def prev_ball(x):
        if prev_cover is None:
            return 0
        return int(np.nonzero(prev_cover.members[x])[0][0])

    worst_balls = worst_targets = worst_sources = 0
    for m in range(len(cover.centers)):
        inside = [p for p in new if cover.members[p, m]]
        if not inside:
            continue
        groups: dict[int, set] = {}
        sources: dict[int, int] = {}
        for p in inside:
            b = prev_ball(eventual[p])
            groups.setdefault(b, set()).add(eventual[p])
            sources[b] = sources.get(b, 0) + 1
        worst_balls = max(worst_balls, len(groups))
        worst_targets = max(worst_targets, max(len(g) for g in groups.values()))
        worst_sources = max(worst_sources, max(sources.values()))
    return {
        "previous_balls": worst_balls,
        "targets_per_ball": worst_targets,
        "sources_per_ball": worst_sources,
        "fiber_estimate": worst_balls * worst_targets,
        "bound_balls": N * N,
        "bound_points": bound_pts,
        "ok": worst_balls <= N * N and worst_targets <= bound_pts and worst_sources <= bound_pts,
    }


# driver ----------------------------------------------------------------------

def _build_once(space: HypGraphSpace, boundary: BoundaryModel, J, N: int) -> RTree:
    metric = boundary.metric
    schedule = make_schedule(boundary, N, J)
    tree = RTree(space)
    tree.schedule = schedule
    tree.N = N
    tree.delta_units = int(space.delta * space.scale)
    tree.delta_eff_units = delta_eff_units(space, tree.delta_units)
    base = 0
    tree.base_target = base
    tree.add_chain(space.canonical_path(space.r, boundary.proxy_idx[base]), -1, 0)
    tree.ray_end[base] = boundary.proxy_idx[base]
    state = initial_stage(boundary, schedule, base)
    tree.stages.append(state)
    all_pts = len(metric)
    for j in range(1, schedule.J + 1):
        if len(state.S) == all_pts:
            break
        nxt = stage_sets(boundary, schedule, j, state)
        old = set(state.S)
        new = [p for p in nxt.S if p not in old]
        nxt.new = order_new_points(new, state.cover, schedule, j, metric)
        Q, q, pairs = compute_Q_q(space, boundary, schedule, j)
        nxt.Q, nxt.q, nxt.pairs_in_range = Q, q, pairs
        eps_ratio = schedule.ratio
        nxt.beta = compute_beta(eps_ratio, boundary.params)
        if Q is not None:
            nxt.checks["Q_minus_q"] = space.value(Q - q) <= nxt.beta + FLOAT_TOL
        D = metric.units
        start = len(tree.attach_log)
        within = metric.le_threshold(schedule.epsilons[j - 1])
        for order, (p, c, k) in enumerate(nxt.new):
            cands = [s for s in state.S if D[p, s] <= within]
            if not cands:
                raise StageError(f"stage {j}: no old point within eps_(j-1) of {metric.points[p]!r}",
                                 metric.points[p])
            anchor = min(cands, key=lambda s: (D[p, s], s))
            rec = attach_ray(tree, p, anchor, Q, boundary, j, order, c, k)
            rec.connected_to = connect_target(tree, tree.attach_log, rec.attach_vertex, p, metric)
        records = tree.attach_log[start:]
        eventual = track_connections(records, state.S, metric, N, schedule.epsilons[j - 1])
        delta = tree.delta_units
        nxt.checks["claim1"] = all(rec.claim1_units <= delta for rec in records)
        nxt.checks["claim3_direct"] = all(rec.claim3_direct for rec in records)
        nxt.checks["claim3"] = all(rec.claim3 for rec in records)
        bad2 = claim2_violations(nxt, state.cover, schedule, metric)
        nxt.checks["claim2"] = not bad2
        nxt.details["claim2_violations"] = [[metric.points[a], metric.points[b]] for a, b in bad2[:20]]
        nxt.star = star_bookkeeping(nxt, state, eventual, N)
        nxt.checks["star"] = nxt.star["ok"]
        nxt.details["case_counts"] = {c: sum(rec.case == c for rec in records) for c in ("A", "B")}
        nxt.details["fallbacks"] = sum(rec.fallback for rec in records)
        tree.stages.append(nxt)
        state = nxt
    return tree


def build_tree(space: HypGraphSpace, boundary: BoundaryModel, J: int | None = None,
               N: int | None = None, max_retries: int = MAX_RETRIES) -> RTree:
    """Run the construction, doubling N (at most ``max_retries`` times) when a cover
    or stage bound fails."""
    if len(boundary) == 0:
        raise ConstructionError("boundary has no proxies")
    if N is None:
        N = doubling_constant(boundary.metric).N
    history = []
    last = None
    for _ in range(max_retries + 1):
        history.append(N)
        try:
            tree = _build_once(space, boundary, J, N)
            tree.N_history = history
            return tree
        except (CoverBoundError, StageError) as exc:
            last = exc
            N *= 2
    raise ConstructionError(f"construction failed for N in {history}: {last}", getattr(last, "witness", None))
