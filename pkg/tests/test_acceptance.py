"""Acceptance suite: each criterion runs at its stated tolerance and records one
pass/fail line, printed at the end of the pytest run."""

import itertools
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import CORPUS, admissible, instance, record_criterion
from hyptree import approx
from hyptree.doubling import packing_number
from hyptree.hyp_graph import HypGraphSpace, delta_thin_triangles
from hyptree.metric_core import FLOAT_TOL, visual_metric
from hyptree.rtree_build import build_tree, fiber_bound, stretch_bound
from hyptree.verify import check_outspread, check_visual_coverage, tree_beta, verify

RUNTIME_LIMIT = 300.0  # seconds per instance
APPROXIMATIONS = [n for n in CORPUS if n.split(":")[0] in ("interval", "cantor", "grid")]


@pytest.fixture(scope="module")
def runs():
    """Fresh generate + build + verify of every corpus instance, timed."""
    out = {}
    for name in CORPUS:
        t0 = time.perf_counter()
        space, boundary = instance.__wrapped__(name)
        tree = build_tree(space, boundary)
        rep = verify(tree, boundary)
        out[name] = (space, boundary, tree, rep, time.perf_counter() - t0)
    return out


def _check(number, title, failures, detail=""):
    record_criterion(number, title, not failures, detail if not failures else f"{failures[:5]}")
    assert not failures, failures


def test_corpus_is_within_the_size_limit():
    for name in CORPUS:
        assert len(instance(name)[0]) <= 20_000


def test_criterion_01_tree_soundness(runs):
    failures = []
    slowest = 0.0
    for name, (space, boundary, tree, rep, seconds) in runs.items():
        res = rep.get("tree_validity")
        m = res.measured
        slowest = max(slowest, seconds)
        if not (res.status == "pass" and m["acyclic"] and m["connected"] and m["four_point"] == 0):
            failures.append((name, m))
        if seconds > RUNTIME_LIMIT:
            failures.append((name, f"{seconds:.1f}s"))
    _check(1, "tree soundness on the corpus", failures, f"{len(runs)} instances, slowest {slowest:.1f}s")


def test_criterion_02_fiber_bound(runs):
    failures = []
    for name, (space, boundary, tree, rep, _) in runs.items():
        m = rep.get("boundary_map").measured
        bound = fiber_bound(tree.N)
        if not (m["M"] <= bound and m["M_stage"] <= bound):
            failures.append((name, m["M"], m["M_stage"], bound))
    m = runs["cantor:3"][3].get("boundary_map").measured
    if not (m["M"] <= 16 and m["M_stage"] <= 16):
        failures.append(("cantor:3 regression guard", m["M"], m["M_stage"]))
    if fiber_bound(2) != 128:
        failures.append(("N=2 substitution", fiber_bound(2)))
    _check(2, "fiber bound", failures, f"cantor:3 M={m['M']} M_stage={m['M_stage']}")


def test_criterion_03_surjectivity(runs):
    failures = []
    for name, (space, boundary, tree, rep, _) in runs.items():
        if sorted(tree.ray_end) != list(range(len(boundary))):
            failures.append((name, len(tree.ray_end), len(boundary)))
        if any(t is None for t in tree.leaf_targets().values()):
            failures.append((name, "leaf without target"))
    _check(3, "surjectivity at saturation", failures)


def test_criterion_04_quasi_geodesy(runs):
    failures = []
    worst = Fraction(0)
    for name, (space, boundary, tree, rep, _) in runs.items():
        m = rep.get("ray_quasigeodesy").measured
        bound = stretch_bound(tree.N, space.delta, tree_beta(tree, boundary))
        worst = max(worst, m["C_star"])
        if not float(m["C_star"]) <= bound:
            failures.append((name, m["C_star"], bound))
        if space.delta == 0 and m["C_star"] != 0:
            failures.append((name, "delta = 0 but C* =", m["C_star"]))
    _check(4, "ray quasi-geodesy", failures, f"max C* = {worst}")


def test_criterion_05_stage_invariants(runs):
    failures = []
    records = 0
    for name, (space, boundary, tree, rep, _) in runs.items():
        for state in tree.stages[1:]:
            bad = [k for k, v in state.checks.items() if not v]
            if bad:
                failures.append((name, state.j, bad))
            for key in ("b_nested", "c_separated", "d_multiplicity", "e_centers_separated",
                        "f_open_cover", "g_family_multiplicity", "h_center_multiplicity",
                        "claim1", "claim2", "claim3", "star"):
                if key not in state.checks:
                    failures.append((name, state.j, "missing", key))
        for rec in tree.attach_log:
            records += 1
            if not (rec.claim1_units <= tree.delta_units and rec.claim3_direct and rec.claim3):
                failures.append((name, "record", rec.order))
    _check(5, "stage invariants, claims and bookkeeping", failures, f"{records} attach records")


def test_criterion_06_visual_sandwich(runs):
    failures = []
    pairs = 0
    for name, (space, boundary, tree, rep, _) in runs.items():
        P = boundary.products.values
        eps, epsp = boundary.params.epsilon, boundary.params.epsilon_prime
        upper = np.exp(-eps * P)
        off = ~np.eye(len(boundary), dtype=bool)
        d = boundary.visual
        ok = (d[off] <= upper[off] + FLOAT_TOL) & (d[off] >= epsp * upper[off] - FLOAT_TOL)
        pairs += int(off.sum()) // 2
        if not ok.all():
            failures.append((name, int((~ok).sum())))
    _check(6, "visual metric sandwich", failures, f"{pairs} proxy pairs")


def test_criterion_07_bracketing(runs):
    failures = []
    triples = 0
    for name, (space, boundary, tree, rep, _) in runs.items():
        res = rep.get("bracketing")
        expected = "exhaustive" if len(space) <= 500 else "sampled"
        triples += res.measured["triples"]
        if res.status != "pass" or res.measured["mode"] != expected:
            failures.append((name, res.measured))
        if expected == "sampled" and res.measured["triples"] != 10_000:
            failures.append((name, "sample size", res.measured["triples"]))
    _check(7, "Gromov-product bracketing", failures, f"{triples} triples")


def _chain_failures(boundary, max_support=8):
    n = len(boundary)
    idx_all = list(range(n))[:max_support]
    bad = []
    for size in range(2, len(idx_all) + 1):
        for support in itertools.combinations(idx_all, size):
            _, table = visual_metric(boundary.products, boundary.params, support)
            P = boundary.products.values[np.ix_(support, support)]
            weights = np.exp(-boundary.params.epsilon * P).tolist()
            expected = np.array(oracles.chain_metric(weights))
            if not np.allclose(table, expected, atol=FLOAT_TOL, rtol=0):
                bad.append(support)
    return bad


def test_criterion_08_oracle_equivalences():
    failures = []
    # (i) visual metric against chain enumeration on every support of <= 8 points
    supports = 0
    for name in ("cantor:3", "interval:5", "free-group:2"):
        space, boundary = instance(name)
        supports += sum(1 for k in range(2, min(8, len(boundary)) + 1)
                        for _ in itertools.combinations(range(min(8, len(boundary))), k))
        failures += [(name, s) for s in _chain_failures(boundary)]
    # (ii) packing numbers against the clique oracle on <= 40 points
    for name, scales in (("interval:17", [(Fraction(1, 16), Fraction(1, 4)), (Fraction(1, 8), 1)]),
                         ("cantor:5", [(Fraction(1, 9), 1), (Fraction(1, 27), Fraction(1, 3))])):
        kind, arg = name.split(":")
        X = approx.interval(int(arg)) if kind == "interval" else approx.cantor(int(arg))
        for a, b in scales:
            count, exact = packing_number(X, a, b)
            expected = oracles.max_packing(list(range(len(X))), lambda p, q: X.units[p, q] / X.scale, a, b)
            if not exact or count != expected:
                failures.append((name, a, b, count, expected))
    # (iii) thin-triangle delta against the pinned exhaustive oracle values
    c6 = HypGraphSpace(range(6), oracles.cycle_graph_edges(6), 0)
    g5 = HypGraphSpace([(i, j) for i in range(5) for j in range(5)], oracles.grid_graph_edges(5), (0, 0))
    for label, g, pinned in (("C6", c6, 1), ("grid5", g5, 4)):
        if delta_thin_triangles(g).delta != pinned:
            failures.append((label, delta_thin_triangles(g).delta, pinned))
    _check(8, "oracle equivalences", failures, f"{supports} chain supports")


@given(st.lists(st.integers(0, 500), min_size=1, max_size=40, unique=True), st.integers(1, 100),
       st.integers(0, 300))
@settings(max_examples=30, deadline=None)
def test_criterion_08_packing_on_random_point_sets(xs, alpha, extra):
    from hyptree.metric_core import FiniteMetricSpace

    X = FiniteMetricSpace.from_table(range(len(xs)), [[abs(a - b) for b in xs] for a in xs])
    count, exact = packing_number(X, alpha, alpha + extra)
    assert exact
    assert count == oracles.max_packing(list(range(len(xs))), lambda a, b: abs(xs[a] - xs[b]),
                                        alpha, alpha + extra)


def _coverage(X, levels):
    H = approx.build_hyperbolic_approximation(X, levels)
    space = H.graph
    boundary = approx.approximation_boundary(H, admissible(space))
    tree = build_tree(space, boundary)
    return check_visual_coverage(tree, boundary)


def _point_set(name):
    kind, arg = name.split(":")
    return {"interval": approx.interval, "cantor": approx.cantor, "grid": approx.grid}[kind](int(arg))


def test_criterion_09_visual_coverage(runs):
    failures = []
    worst = []
    for name in APPROXIMATIONS:
        space, boundary, tree, rep, _ = runs[name]
        res = rep.get("visual_coverage")
        m = res.measured
        if res.status != "pass" or m["D"] > 2 or float(m["Delta"]) > m["kappa_budget"] + float(m["D"]):
            failures.append((name, m))
        X = _point_set(name)
        J = approx.default_levels(X)
        nxt = _coverage(X, J + 1)
        a, b = m["Delta"], nxt.measured["Delta"]
        if nxt.status != "pass" or max(a, b) > 2 * min(a, b):
            failures.append((name, "unstable", a, b))
        worst.append(f"{name}:{a}/{b}")
    _check(9, "visual coverage", failures, "Delta at J/J+1 " + " ".join(worst))


def grid_with_pendant(L):
    V = [(i, j) for i in range(5) for j in range(5)]
    proxies = [v for v in V if v[0] == 4 or v[1] == 4]
    g = HypGraphSpace(V, oracles.grid_graph_edges(5), (0, 0), 4, proxies)
    return approx.with_pendant(g, (2, 2), L)


def _pendant_fixtures():
    """(label, (space, boundary), L, stem): a pendant path whose last L units lie
    outside the closed Delta-ball of the tree; ``stem`` is the part inside it."""
    for at in ("e", "a", "ab"):
        for L in (1, 3, 6):
            yield f"free-group:{at}:{L}", instance(f"pendant:{at}:{L}"), L, 0
    for L in (2, 5):
        g = grid_with_pendant(L)
        yield f"grid5:(2,2):{L}", (g, approx.boundary_model(g, admissible(g), "B")), L, 0
    # on the Cantor approximation the rays stray kappa = 2 from root-proxy
    # geodesics, so the Delta-ball of the tree reaches 2 units into a root pendant
    H = approx.build_hyperbolic_approximation(approx.cantor(3))
    base = approx.approximation_boundary(H, admissible(H.graph))
    stem = int(check_outspread(build_tree(H.graph, base), base).measured["core_budget"])
    for L in (2, 4):
        g = approx.with_pendant(H.graph, H.root, stem + L)
        yield f"cantor:3:root:{stem}+{L}", (g, approx.boundary_model(g, admissible(g), "B")), L, stem


def test_criterion_10_outspread():
    failures = []
    count = 0
    for label, (space, boundary), L, stem in _pendant_fixtures():
        count += 1
        tree = build_tree(space, boundary)
        res = check_outspread(tree, boundary)
        m = res.measured
        pendant = {space.index[f"pend:{k}"] for k in range(int(stem) + 1, int(stem) + L + 1)}
        core = approx.visual_core(space, boundary, m["core_budget"])
        if res.status != "pass" or m["outspread"] < L:
            failures.append((label, m))
        if m["Delta_core"] != stem:
            failures.append((label, "Delta_core", m["Delta_core"], stem))
        if pendant & set(core.kept):
            failures.append((label, "core keeps pendant vertices"))
    _check(10, "out-spread of non-visual pendants", failures, f"{count} fixtures")


def test_root_pendant_outspread_loses_exactly_delta_core():
    H = approx.build_hyperbolic_approximation(approx.cantor(3))
    for total in (1, 2, 3, 5):
        g = approx.with_pendant(H.graph, H.root, total)
        b = approx.boundary_model(g, admissible(g), "B")
        m = check_outspread(build_tree(g, b), b).measured
        assert m["outspread"] == max(0, total - m["Delta_core"])


def _pipeline(out_dir, argv):
    cmd = [sys.executable, "-m", "hyptree.cli"]
    steps = [["generate", *argv, "--out", str(out_dir)], ["build", "--dir", str(out_dir)],
             ["verify", "--dir", str(out_dir)], ["export", "--dir", str(out_dir), "--dot"]]
    for step in steps:
        subprocess.run(cmd + step, check=True, capture_output=True)
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


def test_criterion_11_determinism(tmp_path):
    failures = []
    cases = {"cantor3": ["cantor", "--depth", "3"], "ladder": ["ladder"],
             "free_group": ["free-group", "--rank", "2", "--radius", "3"],
             "multistage": ["cantor", "--depth", "3", "--ratio", "1/3000"]}
    files = 0
    for label, argv in cases.items():
        first = _pipeline(tmp_path / f"{label}-1", argv)
        second = _pipeline(tmp_path / f"{label}-2", argv)
        files += len(first)
        if first.keys() != second.keys():
            failures.append((label, sorted(first), sorted(second)))
        failures += [(label, name) for name in first if first[name] != second.get(name)]
    _check(11, "determinism of the full pipeline", failures, f"{files} artifacts compared byte for byte")
