import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import two_robot_stitch_case
from scouttask.posegraph import (
    NODE_STRIDE,
    DisconnectedGraphError,
    EdgeKind,
    Pose2,
    PoseGraph,
    PoseGraphError,
    add_loop_closure,
    estimate_relative_pose,
    load_g2o,
    make_scan,
    objective,
    read_g2o,
    save_g2o,
    similarity_score,
    solve_pose_graph,
    stitch_map,
    wrap_angle,
    write_g2o,
)
from scouttask.posegraph.registration import register_points

angles = st.floats(-20, 20, allow_nan=False)
coords = st.floats(-50, 50, allow_nan=False)
poses = st.builds(Pose2, coords, coords, angles)


# -- SE(2) ------------------------------------------------------------------

def test_theta_normalised_half_open():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert Pose2(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)
    assert -math.pi < Pose2(0, 0, -7.0).theta <= math.pi


@given(poses, poses)
def test_compose_inverse_round_trip(a, b):
    assert a.compose(a.inverse()).isclose(Pose2(), 1e-9)
    assert a.compose(a.between(b)).isclose(b, 1e-7)


def test_compose_by_hand():
    p = Pose2(1, 0, 0).compose(Pose2(0, 1, math.pi / 2))
    assert (p.x, p.y, p.theta) == pytest.approx((1, 1, math.pi / 2), abs=1e-15)
    q = Pose2(1, 2, math.pi / 2).transform_points(np.array([[1.0, 0.0]]))
    assert q[0] == pytest.approx([1.0, 3.0], abs=1e-15)


# -- graph ------------------------------------------------------------------

def chain(owner="a", base=0, rels=((1, 0, 0), (0, 1, math.pi / 2)), info=None):
    g = PoseGraph()
    g.add_node(base, owner, Pose2())
    est = Pose2()
    for k, r in enumerate(rels, start=1):
        est = est.compose(Pose2(*r))
        g.add_node(base + k, owner, est)
        g.add_edge(base + k - 1, base + k, Pose2(*r), info)
    return g


def test_edge_endpoints_and_spd_enforced():
    g = chain()
    with pytest.raises(PoseGraphError):
        g.add_edge(0, 99, Pose2())
    with pytest.raises(PoseGraphError):
        g.add_edge(0, 2, Pose2(), np.diag([1.0, -1.0, 1.0]), EdgeKind.INTRA_LOOP)
    with pytest.raises(PoseGraphError):
        g.add_edge(0, 2, Pose2(), np.array([[1, 2, 0], [0, 1, 0], [0, 0, 1.0]]), EdgeKind.INTRA_LOOP)


def test_odometry_chain_must_stay_simple():
    g = chain()
    with pytest.raises(PoseGraphError):
        g.add_edge(0, 2, Pose2())  # branch: 0 already has a successor
    with pytest.raises(PoseGraphError):
        g.add_edge(2, 0, Pose2())  # cycle back to the head
    g.add_node(7, "b", Pose2())
    with pytest.raises(PoseGraphError):
        g.add_edge(2, 7, Pose2())  # crosses robots
    # loop closures are free to connect anything
    g.add_edge(2, 0, Pose2(), kind=EdgeKind.INTRA_LOOP)


def test_chain_segments_join_in_any_order():
    g = PoseGraph()
    for n in range(4):
        g.add_node(n, "a", Pose2())
    g.add_edge(2, 3, Pose2())
    g.add_edge(0, 1, Pose2())
    g.add_edge(1, 2, Pose2())
    with pytest.raises(PoseGraphError):
        g.add_edge(3, 0, Pose2())


def test_add_loop_closure_examples():
    gi, gj = PoseGraph(), PoseGraph()
    gi.add_node(0, "a", Pose2())
    gj.add_node(NODE_STRIDE, "b", Pose2())
    m = add_loop_closure(gi, gj, 0, NODE_STRIDE, Pose2(), np.eye(3) * 0.01)
    assert len(m) == 2 and m.edge_count(EdgeKind.INTER_LOOP) == 1
    again = add_loop_closure(m, gj, 0, NODE_STRIDE, Pose2(), np.eye(3) * 0.01)
    assert again.edge_count(EdgeKind.INTER_LOOP) == 1
    gi.add_node(1, "a", Pose2(1, 0, 0))
    gi.add_edge(0, 1, Pose2(1, 0, 0))
    two = add_loop_closure(add_loop_closure(gi, gj, 0, NODE_STRIDE, Pose2(), np.eye(3)),
                           gj, 1, NODE_STRIDE, Pose2(-1, 0, 0), np.eye(3))
    assert two.edge_count(EdgeKind.INTER_LOOP) == 2
    assert np.allclose(two.edges[-1].information, np.eye(3))
    with pytest.raises(PoseGraphError):
        add_loop_closure(gi, gj, 5, NODE_STRIDE, Pose2(), np.eye(3))
    # the inputs are not modified
    assert gi.edge_count(EdgeKind.INTER_LOOP) == 0 and len(gj) == 1


# -- solver -----------------------------------------------------------------

def test_identity_chain_solves_to_anchor():
    g = PoseGraph()
    g.add_node(0, "a", Pose2(2, 3, 0.5))
    for k in range(1, 5):
        g.add_node(k, "a", Pose2(k * 1.3, -k, 0.1 * k))
        g.add_edge(k - 1, k, Pose2())
    sol = solve_pose_graph(g)
    for k in range(5):
        assert sol[k].isclose(Pose2(2, 3, 0.5), 1e-9)
    assert sol.converged


def test_three_node_chain_matches_hand_composition():
    g = PoseGraph()
    for k in range(3):
        g.add_node(k, "a", Pose2(0.3 * k, -0.2 * k, 0.1 * k))  # deliberately wrong guesses
    g.add_edge(0, 1, Pose2(1, 0, 0))
    g.add_edge(1, 2, Pose2(0, 1, math.pi / 2))
    sol = solve_pose_graph(g)
    expected = {0: (0, 0, 0), 1: (1, 0, 0), 2: (1, 1, math.pi / 2)}
    for k, v in expected.items():
        assert sol[k].as_vector() == pytest.approx(v, abs=1e-9)


def noisy_square(seed: int) -> PoseGraph:
    rng = np.random.default_rng(seed)
    g = PoseGraph()
    truth = [Pose2(0, 0, 0), Pose2(2, 0, math.pi / 2), Pose2(2, 2, math.pi), Pose2(0, 2, -math.pi / 2)]
    est = Pose2()
    g.add_node(0, "a", est)
    for k in range(1, 4):
        rel = truth[k - 1].between(truth[k])
        noisy = Pose2(rel.x + rng.normal(0, 0.1), rel.y + rng.normal(0, 0.1), rel.theta + rng.normal(0, 0.05))
        est = est.compose(noisy)
        g.add_node(k, "a", est)
        g.add_edge(k - 1, k, noisy)
    g.add_edge(3, 0, truth[3].between(truth[0]), kind=EdgeKind.INTRA_LOOP)
    return g


@pytest.mark.parametrize("seed", range(20))
def test_noisy_square_reduces_objective(seed):
    g = noisy_square(seed)
    sol = solve_pose_graph(g)
    assert sol.final_objective < sol.initial_objective
    assert objective(g, sol.poses) == pytest.approx(sol.final_objective, rel=1e-9, abs=1e-15)
    assert sol.poses[0] == g.nodes[0].estimate  # gauge held exactly


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 8), loops=st.integers(0, 4))
def test_solver_never_increases_objective(seed, n, loops):
    rng = np.random.default_rng(seed)
    g = PoseGraph()
    g.add_node(0, "a", Pose2(*rng.normal(size=3)))
    for k in range(1, n):
        g.add_node(k, "a", Pose2(*rng.normal(0, 3, size=3)))
        g.add_edge(k - 1, k, Pose2(*rng.normal(0, 2, size=3)))
    for _ in range(loops):
        i, j = rng.choice(n, size=2, replace=False)
        g.add_edge(int(i), int(j), Pose2(*rng.normal(0, 2, size=3)),
                   np.diag(rng.uniform(0.5, 50, size=3)), EdgeKind.INTRA_LOOP)
    sol = solve_pose_graph(g)
    assert sol.final_objective <= sol.initial_objective
    assert all(b <= a for a, b in zip(sol.history, sol.history[1:]))
    assert sol.poses[0] == g.nodes[0].estimate


def test_disconnected_graph_reports_components():
    g = chain()
    g.add_node(10, "b", Pose2())
    g.add_node(11, "b", Pose2())
    g.add_edge(10, 11, Pose2(1, 0, 0))
    with pytest.raises(DisconnectedGraphError) as err:
        solve_pose_graph(g)
    assert err.value.components == [[0, 1, 2], [10, 11]]


# -- scans ------------------------------------------------------------------

def random_scan(seed, n=30, node=0, owner="a"):
    pts = np.random.default_rng(seed).uniform(-20, 20, size=(n, 2))
    return make_scan(owner, node, pts), pts


def test_similarity_identity_rotation_symmetry():
    a, pts = random_scan(1)
    assert similarity_score(a, a) == 1.0
    for theta in (0.3, 1.7, -2.9, math.pi):
        moved = make_scan("b", 5, Pose2(4.0, -7.0, theta).transform_points(pts))
        assert similarity_score(a, moved) == 1.0
    b, _ = random_scan(2)
    assert similarity_score(a, b) == similarity_score(b, a)
    assert 0.0 <= similarity_score(a, b) <= 1.0


def test_similarity_disjoint_support_and_empty():
    near = make_scan("a", 0, [[0, 0], [1, 0]])
    far = make_scan("b", 0, [[0, 0], [55, 0]])
    assert similarity_score(near, far) == 0.0
    empty = make_scan("a", 0, np.zeros((0, 2)))
    assert similarity_score(empty, empty) == 0.0
    assert similarity_score(empty, near) == 0.0
    assert near.signature.sum() == pytest.approx(1.0)
    assert empty.signature.sum() == 0.0


# -- registration -----------------------------------------------------------

def test_registration_recovers_known_transform():
    a, pts = random_scan(3)
    t = Pose2(1.0, 2.0, math.pi / 2)
    b = make_scan("b", 1, t.transform_points(pts))
    est = estimate_relative_pose(a, b)
    assert est is not None
    assert est.transform.as_vector() == pytest.approx([1, 2, math.pi / 2], abs=1e-9)
    assert np.all(np.linalg.eigvalsh(est.covariance) > 0)


def test_registration_underdetermined():
    one = make_scan("a", 0, [[1.0, 2.0]])
    b, _ = random_scan(4)
    assert estimate_relative_pose(one, b) is None
    assert estimate_relative_pose(b, one) is None


def test_registration_with_half_spurious_landmarks():
    a, pts = random_scan(5, n=24)
    t = Pose2(-3.0, 0.5, -0.8)
    spurious = np.random.default_rng(6).uniform(-25, 25, size=(12, 2))
    b = make_scan("b", 1, np.vstack([t.transform_points(pts), spurious]))
    est = estimate_relative_pose(a, b)
    assert est is not None
    assert est.transform.boxminus(t) == pytest.approx([0, 0, 0], abs=1e-6)


def test_registration_reassociates_beyond_descriptor_matches():
    # jittered landmarks break most descriptor matches; proximity refit recovers them
    a, pts = random_scan(8, n=30)
    t = Pose2(2.0, -1.0, 0.4)
    jitter = np.random.default_rng(9).normal(0, 0.05, size=pts.shape)
    b = make_scan("b", 1, t.transform_points(pts) + jitter)
    est = estimate_relative_pose(a, b)
    assert est is not None
    assert len(est.inliers) == 30
    assert np.array_equal(est.inliers[:, 0], est.inliers[:, 1])
    assert est.transform.boxminus(t) == pytest.approx([0, 0, 0], abs=0.05)


def test_registration_rejects_coincident_inliers():
    a = np.zeros((6, 2))
    corr = np.stack([np.arange(6), np.arange(6)], axis=1)
    assert register_points(a, a.copy(), corr) is None


def test_registration_min_inliers_gate():
    pts = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
    corr = np.stack([np.arange(3), np.arange(3)], axis=1)
    assert register_points(pts, pts, corr, min_inliers=4) is None
    assert register_points(pts, pts, corr, min_inliers=3) is not None


# -- stitching --------------------------------------------------------------

def _single_scan_graph(owner, index, n_nodes=2):
    g = PoseGraph()
    for k in range(n_nodes):
        g.add_node(index * NODE_STRIDE + k, owner, Pose2(float(k), 0.0, 0.0))
        if k:
            g.add_edge(index * NODE_STRIDE + k - 1, index * NODE_STRIDE + k, Pose2(1.0, 0.0, 0.0))
    return g


def test_stitch_identical_scan_single_closure():
    gi, gj = _single_scan_graph("a", 0), _single_scan_graph("b", 1)
    _, pts = random_scan(7, n=25)
    own = [make_scan("a", 0, pts, scan_id=0),
           make_scan("a", 1, np.random.default_rng(8).uniform(-20, 20, size=(3, 2)) * 0.05, scan_id=1)]
    zj = make_scan("b", NODE_STRIDE + 1, pts, scan_id=0)
    result = stitch_map(gi, gj, zj, own, s_star=0.9)
    assert result is not None
    assert len(result.closures) == 1
    assert result.graph.edge_count(EdgeKind.INTER_LOOP) == 1
    # b's node 1 sits exactly on a's node 0
    assert result.graph.nodes[NODE_STRIDE + 1].estimate.isclose(Pose2(), 1e-9)


def test_stitch_gate_leaves_graphs_untouched():
    gi, gj = _single_scan_graph("a", 0), _single_scan_graph("b", 1)
    own = [random_scan(9)[0]]
    zj = make_scan("b", NODE_STRIDE, [[0, 0], [55, 0]])
    before_i, before_j = write_g2o(gi), write_g2o(gj)
    assert stitch_map(gi, gj, zj, own, s_star=0.75) is None
    assert write_g2o(gi) == before_i and write_g2o(gj) == before_j


def test_stitch_two_similar_scans_two_closures():
    gi, gj = _single_scan_graph("a", 0), _single_scan_graph("b", 1)
    _, pts = random_scan(10, n=25)
    # a's nodes are 1 m apart along x; scans describe the same field from both
    own = [make_scan("a", 0, pts, scan_id=0),
           make_scan("a", 1, Pose2(1.0, 0.0, 0.0).inverse().transform_points(pts), scan_id=1)]
    zj = make_scan("b", NODE_STRIDE, pts, scan_id=0)
    result = stitch_map(gi, gj, zj, own)
    assert len(result.closures) == 2
    assert result.graph.edge_count(EdgeKind.INTER_LOOP) == 2
    assert result.graph.nodes[NODE_STRIDE].estimate.isclose(Pose2(), 1e-9)


def test_stitch_attempted_cache_skips_repeats():
    gi, gj, zj, own, _ = two_robot_stitch_case(0, 0.0)
    seen: set = set()
    assert stitch_map(gi, gj, zj, own, attempted=seen) is not None
    assert len(seen) == len(own)
    assert stitch_map(gi, gj, zj, own, attempted=seen) is None


def test_stitch_rejects_scan_outside_sender_graph():
    gi, gj = _single_scan_graph("a", 0), _single_scan_graph("b", 1)
    with pytest.raises(PoseGraphError):
        stitch_map(gi, gj, make_scan("b", 42, [[0, 0], [1, 1]]), [])


def test_two_robot_noiseless_frame_offset_exact():
    gi, gj, zj, own, truth = two_robot_stitch_case(1, 0.0)
    result = stitch_map(gi, gj, zj, own)
    err = result.graph.nodes[NODE_STRIDE].estimate.boxminus(truth)
    assert math.hypot(err[0], err[1]) <= 1e-6
    assert abs(err[2]) <= 1e-8


# -- g2o --------------------------------------------------------------------

def test_g2o_round_trip(tmp_path):
    gi, gj, zj, own, _ = two_robot_stitch_case(2, 0.05)
    merged = stitch_map(gi, gj, zj, own).graph
    text = write_g2o(merged)
    back = read_g2o(text)
    assert write_g2o(back) == text
    assert back.anchor == merged.anchor
    assert back.edge_count(EdgeKind.INTER_LOOP) == merged.edge_count(EdgeKind.INTER_LOOP)
    assert {n: v.owner for n, v in back.nodes.items()} == {n: v.owner for n, v in merged.nodes.items()}
    save_g2o(merged, tmp_path / "m.g2o")
    assert write_g2o(load_g2o(tmp_path / "m.g2o")) == text


def test_g2o_plain_tooling_format():
    text = (
        "VERTEX_SE2 0 0 0 0\n"
        "VERTEX_SE2 1 1 0 0\n"
        "VERTEX_SE2 2 1 1 1.5707963267948966\n"
        "EDGE_SE2 0 1 1 0 0 100 0 0 100 0 400\n"
        "EDGE_SE2 1 2 0 1 1.5707963267948966 100 0 0 100 0 400\n"
        "EDGE_SE2 2 0 -1 1 1.5707963267948966 50 0 0 50 0 200\n"
    )
    g = read_g2o(text)
    assert len(g) == 3 and g.anchor == 0
    assert g.edge_count(EdgeKind.ODOMETRY) == 2
    assert g.edge_count(EdgeKind.INTRA_LOOP) == 1
    assert np.array_equal(g.edges[0].information, np.diag([100.0, 100.0, 400.0]))


def test_g2o_malformed_line():
    with pytest.raises(ValueError, match="line 2"):
        read_g2o("VERTEX_SE2 0 0 0 0\nEDGE_SE2 0 1 1 0\n")
