import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import empty_world, scout, tasker
from scouttask.belief import OccupancyBelief
from scouttask.planner import (
    MCTSTree,
    PlanEvaluator,
    PlannerConfig,
    PlannerError,
    TeamPlanDistribution,
    TrajectoryPlan,
    coverage,
    decmcts_round,
    decode_distribution,
    encode_distribution,
    mi_ucb,
    mutual_information,
    posterior_expected_reward,
    reward_cgf,
)
from scouttask.world import visible_cells


def h2(ps) -> float:
    return -sum(p * math.log2(p) for p in ps if p > 0)


def brute_mi(p: float, k: int, p_d: float, p_f: float) -> float:
    """I(X; Y_1..Y_k) by enumerating all 2^k observation sequences."""
    joint = {}
    for x, px in ((1, p), (0, 1 - p)):
        q = p_d if x else p_f
        for ys in itertools.product((0, 1), repeat=k):
            pr = px
            for y in ys:
                pr *= q if y else 1 - q
            joint[(x, ys)] = pr
    py = {}
    for (x, ys), pr in joint.items():
        py[ys] = py.get(ys, 0.0) + pr
    total = 0.0
    for (x, ys), pr in joint.items():
        px = p if x else 1 - p
        if pr > 0:
            total += pr * math.log2(pr / (px * py[ys]))
    return total


def all_plans(robot_id, world, start, H, heading=0.0):
    out = []

    def rec(cell, acc):
        if len(acc) == H:
            out.append(TrajectoryPlan(robot_id, tuple(acc), True, start, heading))
            return
        for n in world.free_neighbours(cell):
            rec(n, acc + [n])

    rec(start, [])
    return out


# -- coverage ---------------------------------------------------------------

def test_coverage_empty_plan_set():
    w = empty_world(3, 3)
    assert coverage([], {}, w) == ({}, frozenset())


def test_coverage_scout_standing_still():
    w = empty_world(6, 5)
    r = scout("s", w, (2, 2), max_range=2.5)
    obs, _ = coverage([TrajectoryPlan.stay("s", (2, 2), 4)], {"s": r}, w)
    seen = visible_cells(w, r.pose, r.sensors[0])
    assert set(obs) == set(seen) and all(v == 4 for v in obs.values())


def test_coverage_scout_and_tasker_by_hand():
    w = empty_world(3, 3)
    robots = {"s": scout("s", w, (0, 0)), "t": tasker("t", w, (2, 2))}
    plans = [TrajectoryPlan.stay("s", (0, 0), 1), TrajectoryPlan.stay("t", (2, 2), 1)]
    obs, confirm = coverage(plans, robots, w)
    assert obs == {(x, y): 1 for x in range(3) for y in range(3)}
    # both confirm footprints are radius 1.5 around their cell
    assert confirm == {(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)}
    assert (1, 1) in obs and (1, 1) in confirm


# -- mutual information -----------------------------------------------------

def test_mi_examples():
    p = np.full((2, 2), 0.5)
    assert mutual_information(p, {}, (0.9, 0.1)) == 0.0
    assert mutual_information(p, {(0, 0): 0}, (0.9, 0.1)) == 0.0
    assert mutual_information(p, {(0, 0): 1}, (1.0, 0.0)) == pytest.approx(1.0, abs=1e-15)
    # 4-outcome enumeration over {X} x {Y}
    oracle = h2([0.5, 0.5]) - h2([0.9, 0.1])
    assert mutual_information(p, {(0, 0): 1}, (0.9, 0.1)) == pytest.approx(oracle, abs=1e-12)
    assert brute_mi(0.5, 1, 0.9, 0.1) == pytest.approx(oracle, abs=1e-15)


@pytest.mark.parametrize("seed", range(25))
def test_mi_matches_sequence_enumeration(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.001, 0.999, size=(3, 3))
    p_f = rng.uniform(0.0, 0.4)
    p_d = rng.uniform(p_f + 0.05, 1.0)
    obs = {(int(x), int(y)): int(rng.integers(0, 6)) for x, y in rng.integers(0, 3, size=(4, 2))}
    expected = sum(brute_mi(p[c], k, p_d, p_f) for c, k in obs.items() if k)
    assert mutual_information(p, obs, (p_d, p_f)) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=80)
@given(p=st.floats(0.0, 1.0), k=st.integers(0, 12), p_f=st.floats(0.0, 0.45), gap=st.floats(0.05, 0.5))
def test_mi_nonnegative_and_monotone(p, k, p_f, gap):
    ch = (min(1.0, p_f + gap), p_f)
    arr = np.array([[p]])
    a = mutual_information(arr, {(0, 0): k}, ch)
    b = mutual_information(arr, {(0, 0): k + 1}, ch)
    assert a >= 0.0
    assert b >= a - 1e-12
    if p in (0.0, 1.0):
        assert b == pytest.approx(0.0, abs=1e-12)


def test_mi_rejects_negative_counts():
    with pytest.raises(ValueError):
        mutual_information(np.full((1, 1), 0.5), {(0, 0): -1}, (0.9, 0.1))


# -- reward CGF -------------------------------------------------------------

def test_cgf_examples():
    p = np.array([[1.0, 0.5]])
    assert reward_cgf(p, []) == 0.0
    assert reward_cgf(p, [(0, 0)]) == 1.0
    assert reward_cgf(p, [(0, 1)]) == pytest.approx(math.log(0.5 + 0.5 * math.e), abs=1e-15)
    assert reward_cgf(p, [(0, 1)]) == pytest.approx(0.620115, abs=1e-6)


def test_cgf_excludes_confirmed_targets():
    b = OccupancyBelief(2, 2, prior=0.3)
    full = reward_cgf(b, [(0, 0), (1, 1)])
    b.mark_confirmed((0, 0))
    assert reward_cgf(b, [(0, 0), (1, 1)]) == pytest.approx(full / 2)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_cgf_bounds(ps):
    p = np.array([ps])
    cells = [(0, i) for i in range(len(ps))]
    c = reward_cgf(p, cells)
    assert sum(ps) - 1e-12 <= c <= len(ps) + 1e-12


@pytest.mark.parametrize("n", [1, 4, 9])
def test_cgf_matches_reward_enumeration(n):
    ps = np.random.default_rng(n).uniform(size=n)
    total = 0.0
    for bits in itertools.product((0, 1), repeat=n):
        pr = math.prod(p if b else 1 - p for p, b in zip(ps, bits))
        total += pr * math.exp(sum(bits))
    assert reward_cgf(ps[None, :], [(0, i) for i in range(n)]) == pytest.approx(math.log(total), abs=1e-12)


# -- MI-UCB -----------------------------------------------------------------

def _ucb_setup():
    w = empty_world(6, 6)
    belief = OccupancyBelief(6, 6, prior=0.2)
    robots = {"s": scout("s", w, (1, 1), max_range=3.0), "t": tasker("t", w, (4, 4))}
    plans = [TrajectoryPlan.stay("s", (1, 1), 2), TrajectoryPlan("t", ((4, 3), (4, 2)), True, (4, 4))]
    return w, belief, robots, plans


def test_mi_ucb_without_scouts_is_cgf():
    w, belief, robots, plans = _ucb_setup()
    team = {"t": robots["t"]}
    _, confirm = coverage(plans[1:], team, w)
    for delta in (0.05, 0.5):
        assert mi_ucb(belief, plans[1:], PlannerConfig(delta=delta), team, w) == reward_cgf(belief, confirm)


def test_mi_ucb_without_confirm_reward_is_scaled_mi():
    w, belief, robots, plans = _ucb_setup()
    obs, confirm = coverage(plans, robots, w)
    for c in confirm:
        belief.mark_confirmed(c)
    mi = mutual_information(belief, obs, (0.9, 0.05))
    assert mi_ucb(belief, plans, PlannerConfig(delta=0.2), robots, w) == pytest.approx(mi * math.log(2) / 0.2, rel=1e-14)


def test_mi_ucb_linear_in_inverse_delta():
    w, belief, robots, plans = _ucb_setup()
    _, confirm = coverage(plans, robots, w)
    cgf = reward_cgf(belief, confirm)
    a = mi_ucb(belief, plans, PlannerConfig(delta=0.2), robots, w) - cgf
    b = mi_ucb(belief, plans, PlannerConfig(delta=0.1), robots, w) - cgf
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_plan_evaluator_matches_mi_ucb():
    w, belief, robots, plans = _ucb_setup()
    cfg = PlannerConfig(delta=0.1, horizon=2)
    ev = PlanEvaluator(belief, robots, w, cfg)
    assert ev.value(plans) == pytest.approx(mi_ucb(belief, plans, cfg, robots, w), rel=1e-12)


# -- posterior expected reward ----------------------------------------------

def test_posterior_expected_reward_examples():
    p = np.full((3, 1), 0.5)
    cells = [(0, 0), (1, 0), (2, 0)]
    prior = posterior_expected_reward(p, cells, {}, (0.9, 0.1))
    assert prior == pytest.approx(1.5)
    assert prior <= reward_cgf(p, cells)
    one = posterior_expected_reward(p, [(0, 0)], {(0, 0): [True]}, (0.9, 0.1))
    assert one == pytest.approx(0.9, abs=1e-12)
    neg = posterior_expected_reward(p, cells, {c: [False, False] for c in cells}, (0.9, 0.1))
    assert neg <= prior
    assert posterior_expected_reward(p, [(0, 0)], {(0, 0): (1, 1)}, (0.9, 0.1)) == pytest.approx(one)


# -- plans and distributions ------------------------------------------------

def test_trajectory_plan_invariants():
    with pytest.raises(PlannerError):
        TrajectoryPlan("r", ((0, 0), (2, 0)))
    with pytest.raises(PlannerError):
        TrajectoryPlan("r", ((2, 0),), True, (0, 0))
    w = empty_world(3, 3, obstacles=[[0, 0, 0], [0, 1, 0], [0, 0, 0]])
    assert not TrajectoryPlan("r", ((1, 1),), True, (0, 0)).check_feasible(w)
    assert TrajectoryPlan.stay("r", (0, 0), 3).check_feasible(w)


def test_planner_config_validation():
    for bad in ({"delta": 0.0}, {"delta": 1.0}, {"horizon": 0}, {"k_dist": 0}):
        with pytest.raises(PlannerError):
            PlannerConfig(**bad)


def test_distribution_invariants(rng):
    a = TrajectoryPlan.stay("r", (0, 0), 2)
    b = TrajectoryPlan("r", ((1, 0), (1, 1)), True, (0, 0))
    with pytest.raises(PlannerError):
        TeamPlanDistribution({"r": [(a, 0.5), (b, 0.4)]})
    d = TeamPlanDistribution()
    with pytest.raises(PlannerError):
        d.set("r", [(a, 0.5), (b, 0.5)], k_dist=1)
    d.set("r", [(a, 0.25), (b, 0.75)], k_dist=2)
    draws = [d.sample("r", rng) for _ in range(4000)]
    assert abs(sum(x is b for x in draws) / 4000 - 0.75) < 0.03


def test_wire_round_trip():
    plans = [TrajectoryPlan("r1", ((1, 0), (2, 1), (2, 2)), True, (0, 0), 0.5),
             TrajectoryPlan("r1", ((0, 1), (0, 2), (1, 3)), True, (0, 0), 0.5)]
    dist = TeamPlanDistribution({"r1": [(plans[0], 0.3), (plans[1], 0.7)],
                                 "r2": [(TrajectoryPlan.stay("r2", (5, 5), 3), 1.0)]}, stamp=42)
    data = encode_distribution(dist)
    # magic + header, then per robot id, header and k * (H * 4 + 4) bytes
    assert len(data) == 4 + 6 + (2 + 2 + 12 + 2 * 16) + (2 + 2 + 12 + 16)
    back = decode_distribution(data)
    assert back.stamp == 42
    for rid, entries in dist.plans.items():
        got = back.plans[rid]
        assert [p.waypoints for p, _ in got] == [p.waypoints for p, _ in entries]
        assert [p.origin for p, _ in got] == [p.origin for p, _ in entries]
        assert [q for _, q in got] == pytest.approx([q for _, q in entries], abs=1e-7)
        assert sum(q for _, q in got) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(PlannerError):
        decode_distribution(b"nope")


# -- Dec-MCTS ---------------------------------------------------------------

def test_single_step_matches_direct_evaluation():
    # corner cell with its diagonal blocked: stay, east and north are the moves
    obstacles = np.zeros((4, 4), dtype=bool)
    obstacles[1, 1] = True
    w = empty_world(4, 4, obstacles=obstacles)
    belief = OccupancyBelief(4, 4, prior=0.1)
    belief.evidence[3, 0] = int(2.0 * 2**32)
    robots = {"s": scout("s", w, (0, 0), max_range=2.0)}
    cfg = PlannerConfig(horizon=1, mcts_iterations=30, k_dist=3)
    res = decmcts_round("s", belief, None, None, cfg, np.random.default_rng(0), robots=robots, world=w)
    moves = all_plans("s", w, (0, 0), 1)
    assert len(moves) == 3
    values = {m.waypoints: mi_ucb(belief, [m], cfg, robots, w) for m in moves}
    best = max(values, key=values.get)
    assert res.best_plan.waypoints == best
    assert res.best_value == pytest.approx(values[best], rel=1e-12)
    assert sum(p for _, p in res.distribution) == pytest.approx(1.0, abs=1e-9)
    assert len(res.distribution) <= cfg.k_dist


def test_teammate_claim_steers_own_plan():
    w = empty_world(5, 5)
    p = np.full((5, 5), 0.01)
    p[3, 3] = 0.6  # next to both robots
    p[0, 0] = 0.4  # only reachable for us
    robots = {"t1": tasker("t1", w, (2, 2)), "t2": tasker("t2", w, (4, 4))}
    cfg = PlannerConfig(horizon=1, mcts_iterations=60, k_dist=3)
    mate = TrajectoryPlan.stay("t2", (4, 4), 1)
    received = TeamPlanDistribution({"t2": [(mate, 1.0)]})
    res = decmcts_round("t1", p, None, received, cfg, np.random.default_rng(1), robots=robots, world=w)
    joint = {m.waypoints: mi_ucb(p, [m, mate], cfg, robots, w) for m in all_plans("t1", w, (2, 2), 1)}
    assert res.best_value == pytest.approx(max(joint.values()), rel=1e-12)
    _, own_confirm = coverage([res.best_plan], robots, w)
    assert (3, 3) not in own_confirm and (0, 0) in own_confirm
    # alone, the same robot goes for the stronger target
    solo = decmcts_round("t1", p, None, None, cfg, np.random.default_rng(1),
                         robots={"t1": robots["t1"]}, world=w)
    assert (3, 3) in coverage([solo.best_plan], robots, w)[1]


@pytest.mark.parametrize("seed", range(6))
def test_exhaustive_equivalence_small_world(seed):
    rng = np.random.default_rng(seed)
    obstacles = rng.random((4, 4)) < 0.15
    obstacles[0, 0] = False
    w = empty_world(4, 4, obstacles=obstacles)
    p = rng.uniform(0.01, 0.7, size=(4, 4))
    robots = {"s": scout("s", w, (0, 0), max_range=2.5)}
    cfg = PlannerConfig(horizon=2, mcts_iterations=600)
    res = decmcts_round("s", p, None, None, cfg, rng, robots=robots, world=w)
    best = max(mi_ucb(p, [m], cfg, robots, w) for m in all_plans("s", w, (0, 0), 2))
    assert mi_ucb(p, [res.best_plan], cfg, robots, w) == pytest.approx(best, rel=1e-12)


def test_zero_iterations_fallback():
    w = empty_world(5, 5)
    robots = {"s": scout("s", w, (2, 2))}
    cfg = PlannerConfig(horizon=3, mcts_iterations=0, k_dist=4)
    res = decmcts_round("s", np.full((5, 5), 0.1), None, None, cfg, np.random.default_rng(3),
                        robots=robots, world=w)
    assert len(res.distribution) == 4
    assert all(q == 0.25 for _, q in res.distribution)
    assert all(pl.check_feasible(w) and pl.horizon == 3 for pl, _ in res.distribution)


def test_boxed_in_robot_stays():
    obstacles = np.ones((3, 3), dtype=bool)
    obstacles[1, 1] = False
    w = empty_world(3, 3, obstacles=obstacles)
    robots = {"s": scout("s", w, (1, 1))}
    res = decmcts_round("s", np.full((3, 3), 0.1), None, None, PlannerConfig(horizon=3, mcts_iterations=10),
                        np.random.default_rng(0), robots=robots, world=w)
    assert res.best_plan.waypoints == ((1, 1),) * 3


def test_round_is_deterministic():
    w = empty_world(8, 8)
    p = np.random.default_rng(9).uniform(0.01, 0.5, size=(8, 8))
    robots = {"s": scout("s", w, (3, 3), max_range=3.0), "t": tasker("t", w, (5, 5))}
    mate = TeamPlanDistribution({"t": [(TrajectoryPlan("t", ((5, 6), (5, 7), (6, 7)), True, (5, 5)), 0.6),
                                       (TrajectoryPlan.stay("t", (5, 5), 3), 0.4)]})
    cfg = PlannerConfig(horizon=3, mcts_iterations=80)
    runs = [decmcts_round("s", p, None, mate, cfg, np.random.default_rng(5), robots=robots, world=w)
            for _ in range(2)]
    assert runs[0].best_plan == runs[1].best_plan
    assert runs[0].best_value == runs[1].best_value
    assert runs[0].distribution == runs[1].distribution


def test_tree_reused_only_for_same_root():
    w = empty_world(5, 5)
    robots = {"s": scout("s", w, (2, 2))}
    cfg = PlannerConfig(horizon=2, mcts_iterations=20)
    p = np.full((5, 5), 0.1)
    first = decmcts_round("s", p, None, None, cfg, np.random.default_rng(0), robots=robots, world=w, stamp=1)
    again = decmcts_round("s", p, first.tree, None, cfg, np.random.default_rng(1), robots=robots, world=w, stamp=1)
    assert again.tree is first.tree and again.tree.root.visits == 40
    moved = {"s": scout("s", w, (3, 2))}
    fresh = decmcts_round("s", p, first.tree, None, cfg, np.random.default_rng(1), robots=moved, world=w, stamp=1)
    assert isinstance(fresh.tree, MCTSTree) and fresh.tree is not first.tree
