"""Checks on a built tree: validity, quasi-geodesy of root rays, the boundary
map, coverage of the ambient space and geodetic out-spread."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .approx import BoundaryModel, visual_core, visuality_certificate
from .hyp_graph import (
    HypGraphSpace,
    additive_stretch,
    bracketing_check,
    hausdorff_to_geodesic,
    longest_avoiding_geodesic,
    quasi_geodesic_constants,
)
from .metric_core import FLOAT_TOL, FiniteMetricSpace, compute_beta, delta_four_point, sandwich_violations
from .rtree_build import RTree, fiber_bound, stretch_bound

SCHEMA = "hyptree.report/1"
PASS, FAIL, NA = "pass", "fail", "not-applicable"
CHECK_NAMES = (
    "stage_invariants",
    "tree_validity",
    "ray_quasigeodesy",
    "boundary_map",
    "visual_sandwich",
    "bracketing",
    "visual_coverage",
    "outspread",
)
BRACKET_EXHAUSTIVE = 500
BRACKET_SAMPLES = 10_000


@dataclass
class CheckResult:
    name: str
    status: str
    measured: dict = field(default_factory=dict)
    witness: object = None
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.status != FAIL

    def to_json(self):
        return {"name": self.name, "status": self.status, "measured": _plain(self.measured),
                "witness": _plain(self.witness), "note": self.note}


def _plain(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return repr(float(x))
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in sorted(x.items(), key=lambda kv: str(kv[0]))}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


@dataclass
class VerificationReport:
    fingerprint: str
    constants: dict
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def get(self, name) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self):
        return {
            "schema": SCHEMA,
            "fingerprint": self.fingerprint,
            "ok": self.ok,
            "constants": _plain(self.constants),
            "checks": [c.to_json() for c in self.checks],
        }

    def summary(self) -> str:
        width = max(len(n) for n in CHECK_NAMES)
        lines = [f"{'check':<{width}}  status"]
        for c in self.checks:
            lines.append(f"{c.name:<{width}}  {c.status}" + (f"  ({c.note})" if c.note else ""))
        lines.append("")
        for k, v in sorted(self.constants.items()):
            lines.append(f"{k} = {_plain(v)}")
        return "\n".join(lines)


def fingerprint(space: HypGraphSpace, boundary: BoundaryModel) -> str:
    blob = json.dumps({"space": space.to_json(), "boundary": boundary.to_json()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def tree_beta(tree: RTree, boundary: BoundaryModel) -> float:
    """beta for the quotient q = eps_{j-1}/eps_j of the schedule."""
    return compute_beta(tree.schedule.ratio, boundary.params)


# individual checks ------------------------------------------------------------

def check_stage_invariants(tree: RTree) -> CheckResult:
    failed = {}
    cases = {"A": 0, "B": 0}
    for st in tree.stages[1:]:
        bad = sorted(k for k, v in st.checks.items() if not v)
        if bad:
            failed[st.j] = bad
        for c, n in st.details.get("case_counts", {}).items():
            cases[c] += n
    measured = {
        "stages": len(tree.stages) - 1,
        "records": len(tree.attach_log),
        "case_A": cases["A"],
        "case_B": cases["B"],
        "fallbacks": sum(r.fallback for r in tree.attach_log),
        "max_claim1": max((tree.space.value(r.claim1_units) for r in tree.attach_log), default=0),
        "checked": sorted({k for st in tree.stages[1:] for k in st.checks}),
    }
    return CheckResult("stage_invariants", _status(not failed), measured, failed or None)


def skeleton(tree: RTree):
    """Root, leaves and branch points, joined along the tree."""
    keep = {tree.root}
    for v in tree.order:
        deg = len(tree.children[v]) + (tree.parent[v] is not None)
        if deg != 2:
            keep.add(v)
    edges = []
    for v in tree.order:
        if v == tree.root or v not in keep:
            continue
        u = tree.parent[v]
        while u not in keep:
            u = tree.parent[u]
        edges.append((u, v))
    return sorted(keep, key=tree.order.index), edges


def check_tree_validity(tree: RTree) -> CheckResult:
    sp = tree.space
    nodes = tree.order
    pos = {v: k for k, v in enumerate(nodes)}
    edges = tree.edges()
    in_space = all((min(a, b), max(a, b)) in sp.edge_lengths for a, b in edges)
    n = len(nodes)
    if edges:
        A = csr_matrix(([1] * len(edges), ([pos[a] for a, _ in edges], [pos[b] for _, b in edges])),
                       shape=(n, n))
        ncomp = connected_components(A, directed=False)[0]
    else:
        ncomp = 1
    connected = ncomp == 1
    acyclic = len(edges) == n - 1 and len(set(nodes)) == n
    four, sk_nodes, sk_edges, sk_ok = None, [], [], False
    if connected and acyclic:
        order, D = tree.distance_matrix()
        tm = FiniteMetricSpace(tuple(order), D, sp.scale)
        four = delta_four_point(tm, order[0])
        sk_nodes, sk_edges = skeleton(tree)
        sk_ok = len(sk_edges) == len(sk_nodes) - 1
    ok = in_space and connected and acyclic and four == 0 and sk_ok
    measured = {
        "nodes": n,
        "edges": len(edges),
        "connected": connected,
        "acyclic": acyclic,
        "edges_in_space": in_space,
        "four_point": four,
        "skeleton_nodes": len(sk_nodes),
        "skeleton_edges": len(sk_edges),
        "leaves": len(tree.leaves()),
    }
    return CheckResult("tree_validity", _status(ok), measured)


def _ray_stage_Q(tree: RTree) -> dict:
    out = {}
    for rec in tree.attach_log:
        out[rec.target] = tree.stages[rec.stage].Q
    return out


def check_ray_quasigeodesy(tree: RTree, boundary: BoundaryModel) -> CheckResult:
    sp = tree.space
    delta = sp.delta
    beta = tree_beta(tree, boundary)
    bound = stretch_bound(tree.N, delta, beta)
    budget = 10 * (float(delta) + beta)
    stage_Q = _ray_stage_Q(tree)
    worst_c, worst_ray = 0, None
    worst_k = Fraction(0)
    worst_g2 = Fraction(0)
    not_eventual = []
    for target, end in sorted(tree.ray_end.items()):
        ray = tree.ray(end)
        pos = [tree.depth[v] for v in ray]
        c = additive_stretch(ray, sp, pos)
        if c > worst_c or worst_ray is None:
            worst_c, worst_ray = c, boundary.proxies[target]
        if len(ray) > 1:
            names = [sp.vertices[v] for v in ray]
            worst_k = max(worst_k, hausdorff_to_geodesic(names, sp))
            worst_g2 = max(worst_g2, quasi_geodesic_constants(names, sp).gamma2)
        # terminal segment beyond radius Q of the ray's stage must be geodesic
        Q = stage_Q.get(target)
        if Q is not None:
            cut = max((k for k, v in enumerate(ray) if sp._rows[sp.r][v] <= Q), default=0)
            seg = ray[cut:]
            if pos[-1] - pos[cut] != sp._rows[seg[0]][seg[-1]]:
                not_eventual.append(boundary.proxies[target])
    c_star = sp.value(worst_c)
    ok = float(c_star) <= bound + FLOAT_TOL and float(worst_k) <= budget + FLOAT_TOL
    if delta == 0:
        ok = ok and worst_c == 0
    ok = ok and not not_eventual
    measured = {
        "rays": len(tree.ray_end),
        "C_star": c_star,
        "C_star_bound": bound,
        "kappa": worst_k,
        "kappa_budget": budget,
        "gamma2_at_gamma1_2": worst_g2,
        "beta": beta,
        "delta": delta,
        "not_eventually_geodetic": len(not_eventual),
    }
    return CheckResult("ray_quasigeodesy", _status(ok), measured,
                       {"worst_ray": worst_ray, "not_eventually_geodetic": not_eventual[:20]} if not ok else None)


def check_boundary_map(tree: RTree, boundary: BoundaryModel) -> CheckResult:
    metric = boundary.metric
    leaf_targets = tree.leaf_targets()
    untargeted = [tree.space.vertices[v] for v, t in leaf_targets.items() if t is None]
    all_pts = len(metric)
    hit = sorted(tree.ray_end)
    saturated = len(hit) == all_pts
    if saturated:
        surjective = True
        resolution = 0
    else:
        eps = tree.schedule.epsilons[len(tree.stages) - 1]
        near = metric.mask_lt(eps)[:, hit].any(axis=1)
        surjective = bool(near.all())
        resolution = eps
    counts = {}
    for t in tree.ray_end:
        counts[t] = counts.get(t, 0) + 1
    M = max(counts.values(), default=0)
    M_stage = max((st.star.get("fiber_estimate", 0) for st in tree.stages[1:]), default=1)
    bound = fiber_bound(tree.N)
    ok = not untargeted and surjective and M <= bound and M_stage <= bound
    measured = {
        "every_leaf_has_target": not untargeted,
        "surjective": surjective,
        "saturated": saturated,
        "resolution": resolution,
        "M": M,
        "M_stage": M_stage,
        "fiber_bound": bound,
        "N": tree.N,
    }
    note = f"topological dimension of the boundary is at most {max(M, M_stage) - 1}"
    return CheckResult("boundary_map", _status(ok), measured, untargeted[:20] or None, note)


def check_visual_sandwich(boundary: BoundaryModel) -> CheckResult:
    n = len(boundary)
    bad = sandwich_violations(boundary.products, boundary.params, list(range(n)), boundary.visual)
    pairs = [(boundary.proxies[a], boundary.proxies[b]) for a, b in bad]
    return CheckResult("visual_sandwich", _status(not bad),
                       {"pairs": n * (n - 1) // 2, "violations": len(bad),
                        "epsilon": boundary.params.epsilon, "epsilon_prime": boundary.params.epsilon_prime},
                       pairs[:20] or None)


def check_bracketing(space: HypGraphSpace, samples: int = BRACKET_SAMPLES) -> CheckResult:
    delta_units = int(space.delta * space.scale)
    n = len(space)
    if n <= BRACKET_EXHAUSTIVE:
        checked, bad, slack = bracketing_check(space, delta_units)
        mode = "exhaustive"
    else:
        rng = np.random.default_rng(0)
        triples = rng.integers(0, n, size=(samples, 3)).tolist()
        checked, bad, slack = bracketing_check(space, delta_units, triples)
        mode = "sampled"
    wit = [tuple(space.vertices[k] for k in t) for t in bad[:20]]
    return CheckResult("bracketing", _status(not bad),
                       {"mode": mode, "triples": checked, "violations": len(bad),
                        "max_excess_over_product": slack, "two_delta": 2 * space.delta},
                       wit or None)


def tree_distances(tree: RTree) -> np.ndarray:
    """Units distance of every vertex of the space to the tree."""
    return tree.space.dist_to_set(tree.order)


def check_visual_coverage(tree: RTree, boundary: BoundaryModel) -> CheckResult:
    sp = tree.space
    cert = visuality_certificate(sp, boundary)
    beta = tree_beta(tree, boundary)
    kappa_budget = 10 * (float(sp.delta) + beta)
    dist = tree_distances(tree)
    Delta = sp.value(int(dist.max()))
    measured = {"Delta": Delta, "D": cert.D, "budget": kappa_budget + float(cert.D),
                "kappa_budget": kappa_budget}
    if float(cert.D) > kappa_budget:
        return CheckResult("visual_coverage", NA, measured,
                           note="instance is not visual at this scale; see outspread")
    ok = float(Delta) <= kappa_budget + float(cert.D) + FLOAT_TOL
    far = int(np.argmax(dist))
    return CheckResult("visual_coverage", _status(ok), measured, None if ok else sp.vertices[far])


def check_outspread(tree: RTree, boundary: BoundaryModel, budget=None) -> CheckResult:
    """Out-spread outside the Delta-ball of the tree, Delta measured on the visual core.

    The core keeps the vertices within ``budget`` of a canonical root-to-proxy
    geodesic (default: the largest Hausdorff distance of a tree ray to such a
    geodesic).  Delta_core is the largest distance from a core vertex to the
    tree, so the Delta_core-ball of the tree contains the core and its
    out-spread cannot exceed the core's.
    """
    sp = tree.space
    if budget is None:
        budget = Fraction(0)
        for end in tree.ray_end.values():
            ray = tree.ray(end)
            if len(ray) > 1:
                budget = max(budget, hausdorff_to_geodesic([sp.vertices[v] for v in ray], sp))
    core = visual_core(sp, boundary, budget)
    dist = tree_distances(tree)
    delta_core = int(dist[core.kept].max())
    length, ends = longest_avoiding_geodesic(sp, dist, delta_core)
    out = sp.value(length)
    ok = out <= core.outspread
    measured = {"Delta_core": sp.value(delta_core), "outspread": out,
                "core_budget": budget, "core_vertices": len(core.kept),
                "core_outspread": core.outspread}
    return CheckResult("outspread", _status(ok), measured, ends if ends else None)


# the whole report -----------------------------------------------------------

def verify(tree: RTree, boundary: BoundaryModel) -> VerificationReport:
    sp = tree.space
    checks = [
        check_stage_invariants(tree),
        check_tree_validity(tree),
        check_ray_quasigeodesy(tree, boundary),
        check_boundary_map(tree, boundary),
        check_visual_sandwich(boundary),
        check_bracketing(sp),
        check_visual_coverage(tree, boundary),
        check_outspread(tree, boundary),
    ]
    assert tuple(c.name for c in checks) == CHECK_NAMES
    stages = tree.stages[1:]
    constants = {
        "delta": sp.delta,
        "delta_eff": sp.value(tree.delta_eff_units),
        "beta": tree_beta(tree, boundary),
        "N": tree.N,
        "N_history": tree.N_history,
        "epsilon": boundary.params.epsilon,
        "Q": [None if s.Q is None else sp.value(s.Q) for s in stages],
        "q": [None if s.q is None else sp.value(s.q) for s in stages],
        "stages": len(stages),
        "vertices": len(sp),
        "proxies": len(boundary),
        "tree_nodes": len(tree),
        "fiber_bound": fiber_bound(tree.N),
    }
    if math.isinf(constants["beta"]):
        constants["beta"] = "inf"
    return VerificationReport(fingerprint(sp, boundary), constants, checks)
