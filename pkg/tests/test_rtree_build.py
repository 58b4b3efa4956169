from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import MULTI_STAGE, SMALL, admissible, built, instance
from hyptree import approx
from hyptree.doubling import CoverBoundError, doubling_constant
from hyptree.hyp_graph import HypGraphSpace
from hyptree.metric_core import FiniteMetricSpace, gromov_product
from hyptree.rtree_build import (
    AttachRecord,
    ConstructionError,
    RTree,
    StageError,
    build_tree,
    compute_Q_q,
    connect_target,
    exp_bound,
    fiber_bound,
    initial_stage,
    make_schedule,
    order_new_points,
    stage_sets,
    stretch_bound,
    track_connections,
)


def boundary_of(X, levels=None):
    H = approx.build_hyperbolic_approximation(X, levels)
    return H.graph, approx.approximation_boundary(H, admissible(H.graph))


def point_boundary(n_points):
    g = approx.free_group_ball(2, 1) if n_points > 1 else HypGraphSpace("ro", [("r", "o", 1)], "r", 1, ["o"])
    return g, approx.boundary_model(g, admissible(g), "B")


# bounds ---------------------------------------------------------------------------

def test_fiber_bound_for_n_two_is_128():
    assert fiber_bound(2) == 128


@pytest.mark.parametrize("N, expected", [(1, 1), (2, 128), (4, 16 * 4 ** 7)])
def test_fiber_bound_values(N, expected):
    assert fiber_bound(N) == expected


def test_exp_bound_for_non_powers_of_two():
    assert exp_bound(3, 8 * 3) == int(3 ** np.log2(24) + 1e-9)


def test_stretch_bound_formula():
    assert stretch_bound(2, 1, 3) == pytest.approx(129 * (75 + 12))
    assert stretch_bound(2, 0, 0) == 0


# schedule ------------------------------------------------------------------------

def test_schedule_examples():
    g, b = boundary_of(approx.interval(2))
    assert make_schedule(b, 2, 1).epsilons == (1, Fraction(1, 2048))
    assert make_schedule(b, 2, 0).epsilons == (1,)
    assert make_schedule(b, 1, 1).epsilons == (1, Fraction(1, 512))


def test_schedule_stops_at_saturation():
    g, b = instance("cantor:3")
    s = make_schedule(b, 4)
    dmin = b.metric.min_distance()
    assert s.epsilons[-1] <= dmin < s.epsilons[-2]
    assert s.requested is None and not s.truncated
    long = make_schedule(b, 4, 10)
    assert long.epsilons == s.epsilons and long.truncated


@given(st.integers(1, 8), st.integers(0, 4))
@settings(max_examples=30, deadline=None)
def test_schedule_ratio_is_constant(N, J):
    g, b = instance("cantor:3:1/3000")
    s = make_schedule(b, N, J)
    assert s.J <= J and s.ratio == 512 * N * N
    for a, c in zip(s.epsilons, s.epsilons[1:]):
        assert a == c * s.ratio


def test_schedule_rejects_bad_arguments():
    g, b = instance("cantor:2")
    with pytest.raises(ConstructionError):
        make_schedule(b, 0)
    with pytest.raises(ConstructionError):
        make_schedule(b, 2, -1)


# stage sets -------------------------------------------------------------------------

def test_stage_below_minimum_distance_saturates():
    g, b = instance("cantor:3")
    s = make_schedule(b, 4)
    state = stage_sets(b, s, 1, initial_stage(b, s))
    assert sorted(state.S) == list(range(len(b)))


def test_two_proxy_boundary_stage_one():
    g, b = boundary_of(approx.interval(2))
    s = make_schedule(b, 2)
    state = stage_sets(b, s, 1, initial_stage(b, s))
    assert sorted(state.S) == [0, 1]
    members = state.cover.members
    assert members.sum(axis=0).tolist() == [1, 1]


@pytest.mark.parametrize("name", ["cantor:3", "cantor:4", "interval:17"] + MULTI_STAGE)
def test_stage_invariants_hold_at_every_stage(name):
    g, b, tree = built(name)
    for state in tree.stages[1:]:
        for key in ("a_ratio", "b_nested", "c_separated", "d_multiplicity", "e_centers_separated",
                    "f_open_cover", "g_family_multiplicity", "h_center_multiplicity"):
            assert state.checks[key], (name, state.j, key)


def test_stage_sets_reject_too_small_n():
    g, b = instance("interval:17")
    s = make_schedule(b, 1)
    with pytest.raises((CoverBoundError, StageError)):
        stage_sets(b, s, 1, initial_stage(b, s))


# ordering -----------------------------------------------------------------------------

def test_empty_new_set_orders_to_nothing():
    g, b = instance("cantor:3")
    s = make_schedule(b, 4)
    assert order_new_points([], None, s, 1, b.metric) == []


def test_far_apart_points_form_one_class_in_canonical_order():
    g, b = instance("cantor:3")
    s = make_schedule(b, 4)
    out = order_new_points([5, 2, 7], None, s, 1, b.metric)
    assert out == [(5, 1, 1), (2, 1, 2), (7, 1, 3)]


@pytest.mark.parametrize("name", MULTI_STAGE + ["cantor:4"])
def test_classes_are_at_most_n_squared_and_interleaved(name):
    g, b, tree = built(name)
    N = tree.N
    for state in tree.stages[1:]:
        classes = [c for _, c, _ in state.new]
        ranks = [k for _, _, k in state.new]
        assert all(1 <= c <= N * N for c in classes)
        assert ranks == sorted(ranks)
        assert len({p for p, _, _ in state.new}) == len(state.new)


# Q and q --------------------------------------------------------------------------

def test_q_on_a_tree_is_the_product_spread():
    g, b = instance("free-group:3")
    s = make_schedule(b, doubling_constant(b.metric).N, 1)
    Q, q, pairs = compute_Q_q(g, b, s, 1)
    lo, hi = b.metric.ge_threshold(s.epsilons[1]), b.metric.le_threshold(s.epsilons[0])
    prods = [gromov_product(b.proxies[x], b.proxies[y], g.root, g.metric)
             for x in range(len(b)) for y in range(x + 1, len(b))
             if lo <= b.metric.units[x, y] <= hi]
    assert pairs == len(prods)
    assert g.value(Q) == max(prods) and g.value(q) == min(prods)


def test_single_pair_gives_equal_q():
    g, b = boundary_of(approx.interval(2))
    s = make_schedule(b, 2)
    Q, q, pairs = compute_Q_q(g, b, s, 1)
    assert pairs == 1 and Q == q


@pytest.mark.parametrize("name", ["cantor:3", "cantor:4", "grid:8"] + MULTI_STAGE)
def test_q_spread_is_below_beta(name):
    g, b, tree = built(name)
    for state in tree.stages[1:]:
        if state.Q is not None:
            assert g.value(state.Q - state.q) <= state.beta


# attachment ---------------------------------------------------------------------

def test_first_ray_is_the_canonical_geodesic():
    g, b, tree = built("cantor:3")
    base = g.canonical_path(g.r, b.proxy_idx[0])
    assert tree.ray(tree.ray_end[0]) == base


@pytest.mark.parametrize("name", ["free-group:2", "free-group:3", "free-group:4"])
def test_trees_only_use_case_a_with_empty_connectors(name):
    g, b, tree = built(name)
    assert tree.attach_log
    for rec in tree.attach_log:
        assert rec.case == "A" and rec.connector_units == 0 and len(rec.connector) == 1
        assert rec.claim1_units == 0


def test_ladder_uses_case_b_with_a_short_connector():
    g, b, tree = built("ladder")
    recs = [r for r in tree.attach_log if r.case == "B"]
    assert recs
    for rec in recs:
        assert rec.connector_units <= tree.delta_eff_units
        assert rec.claim1_units <= tree.delta_units
        assert rec.connector[-1] in tree and rec.connector[0] == rec.x_R


def test_subrays_are_geodesic_and_end_at_targets():
    for name in SMALL:
        g, b, tree = built(name)
        for rec in tree.attach_log:
            sub = list(rec.subray)
            assert sub[-1] == b.proxy_idx[rec.target]
            assert g.path_units(sub) == g.D[sub[0], sub[-1]]


def test_add_chain_rejects_cycles():
    g, b = instance("cantor:2")
    tree = RTree(g)
    path = g.canonical_path(g.r, b.proxy_idx[0])
    tree.add_chain(path, -1, 0)
    with pytest.raises(ConstructionError):
        tree.add_chain([path[0], path[1]], 0, 1)
    with pytest.raises(ConstructionError):
        tree.add_chain([b.proxy_idx[-1], path[0]], 0, 1)


def test_tree_distance_agrees_with_the_distance_matrix():
    g, b, tree = built("cantor:4")
    order, D = tree.distance_matrix()
    for a in range(0, len(order), 3):
        for c in range(0, len(order), 5):
            assert tree.tree_dist(order[a], order[c]) == D[a, c]


# connections -------------------------------------------------------------------

def _rec(target, connected):
    rec = AttachRecord(1, 0, 1, 1, target, 0, "A", 0, 0, 0, (0,), (0,))
    rec.connected_to = connected
    return rec


def test_direct_connection_to_an_old_point():
    X = FiniteMetricSpace.from_table(range(3), [[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    out = track_connections([_rec(1, 0)], [0], X, 2, 1)
    assert out == {1: 0}


def test_chained_connection_reaches_the_old_point():
    X = FiniteMetricSpace.from_table(range(3), [[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    recs = [_rec(1, 0), _rec(2, 1)]
    assert track_connections(recs, [0], X, 2, 1) == {1: 0, 2: 0}


def test_cyclic_connections_are_a_construction_error():
    X = FiniteMetricSpace.from_table(range(3), [[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    with pytest.raises(ConstructionError):
        track_connections([_rec(1, 2), _rec(2, 1)], [0], X, 2, 1)


def test_connect_target_on_the_base_ray():
    g, b, tree = built("cantor:3")
    assert connect_target(tree, tree.attach_log, tree.root, 3, b.metric) == tree.base_target


@pytest.mark.parametrize("name", SMALL + ["cantor:4", "grid:8"])
def test_claims_hold_on_every_record(name):
    g, b, tree = built(name)
    for state in tree.stages[1:]:
        for key in ("claim1", "claim2", "claim3_direct", "claim3", "star"):
            assert state.checks[key], (name, state.j, key)
    prev_S = {0}
    for state in tree.stages[1:]:
        for rec in tree.attach_log:
            if rec.stage == state.j:
                assert rec.eventually_connected_to in prev_S
        prev_S = set(state.S)


@pytest.mark.parametrize("name", MULTI_STAGE + ["cantor:4"])
def test_star_bookkeeping_is_within_bounds(name):
    g, b, tree = built(name)
    for state in tree.stages[1:]:
        star = state.star
        assert star["previous_balls"] <= star["bound_balls"]
        assert star["targets_per_ball"] <= star["bound_points"]
        assert star["sources_per_ball"] <= star["bound_points"]
        assert star["fiber_estimate"] <= fiber_bound(tree.N)


# build_tree ----------------------------------------------------------------------

def test_single_boundary_point_gives_a_single_ray():
    g, b = point_boundary(1)
    tree = build_tree(g, b)
    assert tree.edges() == [(g.r, b.proxy_idx[0])]
    assert tree.attach_log == [] and len(tree.stages) == 1


def test_two_boundary_points_branch_near_the_gromov_product():
    g, b = boundary_of(approx.interval(2))
    tree = build_tree(g, b)
    e1, e2 = (tree.ray_end[t] for t in (0, 1))
    a, c = tree.ray(e1), tree.ray(e2)
    k = 0
    while k < min(len(a), len(c)) and a[k] == c[k]:
        k += 1
    branch = g.value(tree.depth[a[k - 1]])
    prod = gromov_product(b.proxies[0], b.proxies[1], g.root, g.metric)
    beta = tree.stages[1].beta
    assert prod <= branch <= prod + 4 * g.delta + Fraction(beta)


def test_multi_stage_fixtures_have_several_stages():
    assert [len(built(n)[2].stages) - 1 for n in MULTI_STAGE] == [2, 3]


def test_truncated_build_leaves_some_proxies_without_rays():
    g, b = instance("cantor:3:1/3000")
    tree = build_tree(g, b, J=1)
    assert len(tree.stages) == 2 and 1 < len(tree.ray_end) < len(b)


def test_retry_doubles_n():
    g, b = instance("interval:17")
    tree = build_tree(g, b, N=1)
    assert tree.N_history == [1, 2] and tree.N == 2


def test_retry_budget_exhausted_raises():
    g, b = instance("interval:17")
    with pytest.raises(ConstructionError):
        build_tree(g, b, N=1, max_retries=0)


def test_empty_boundary_is_rejected():
    g = approx.free_group_ball(2, 1)
    b = approx.boundary_model(g, admissible(g), "B")
    b.proxies, b.proxy_idx = (), []
    with pytest.raises(ConstructionError):
        build_tree(g, b)


@pytest.mark.parametrize("name", ["cantor:3", "cantor:4"])
def test_cantor_fibers_are_within_the_bound(name):
    g, b, tree = built(name)
    counts = {}
    for t in tree.ray_end:
        counts[t] = counts.get(t, 0) + 1
    assert max(counts.values()) <= fiber_bound(tree.N)


def test_tree_json_lists_every_node_and_ray():
    g, b, tree = built("cantor:3")
    data = tree.to_json(b)
    assert len(data["nodes"]) == len(tree) and len(data["edges"]) == len(tree) - 1
    assert set(data["rays"]) == set(b.proxies)
    assert all(t is not None for t in data["leafTargets"].values())
    assert tree.to_dot().startswith("digraph rtree {")
