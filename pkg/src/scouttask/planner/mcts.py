"""Decentralised MCTS over one robot's trajectory, scored by team MI-UCB."""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from scouttask.planner.acquisition import (
    LN2,
    _probs,
    cell_cgf,
    information_table_bits,
    plan_masks,
    scout_channel,
)
from scouttask.planner.types import (
    PlannerConfig,
    TeamPlanDistribution,
    TrajectoryPlan,
    move_heading,
)
from scouttask.world import Cell, GridWorld, RobotState


class PlanEvaluator:
    """Team MI-UCB for a fixed belief snapshot, with per-plan coverage cached.

    Equivalent to :func:`scouttask.planner.acquisition.mi_ucb` but builds the
    per-cell information and CGF tables once per round.
    """

    def __init__(self, belief, robots: Mapping[str, RobotState], world: GridWorld,
                 config: PlannerConfig, channel: tuple[float, float] | None = None) -> None:
        self.robots = robots
        self.world = world
        self.config = config
        p, confirmed = _probs(belief)
        self.p = p
        self.n = p.size
        n_scouts = sum(1 for r in robots.values() if r.is_scout)
        self.kmax = max(1, n_scouts * config.horizon)
        channel = channel or scout_channel(robots)
        if channel is None:
            self.info = np.zeros((self.kmax + 1, self.n))
        else:
            self.info = information_table_bits(p, self.kmax, *channel) * (LN2 / config.delta)
        self.info_flat = self.info.ravel()
        cgf = cell_cgf(p).ravel()
        cgf[confirmed.ravel()] = 0.0
        self.cgf = cgf
        self._cache: dict[tuple, tuple[np.ndarray | None, np.ndarray]] = {}
        self._index = np.arange(self.n)

    def masks(self, plan: TrajectoryPlan):
        key = plan.key
        hit = self._cache.get(key)
        if hit is None:
            counts, confirm = plan_masks(plan, self.robots[plan.robot_id], self.world)
            flat = counts.ravel()
            hit = (flat if flat.any() else None, confirm.ravel())
            self._cache[key] = hit
        return hit

    def value(self, plans) -> float:
        counts = None
        confirm = None
        for plan in plans:
            c, m = self.masks(plan)
            if c is not None:
                counts = c.copy() if counts is None else counts + c
            confirm = m.copy() if confirm is None else confirm | m
        total = 0.0
        if counts is not None:
            np.minimum(counts, self.kmax, out=counts)
            total += float(self.info_flat[counts * self.n + self._index].sum())
        if confirm is not None:
            total += float(self.cgf[confirm].sum())
        return total


def lookahead_field(evaluator: PlanEvaluator, robot: RobotState, world: GridWorld,
                    discount: float, claimed: np.ndarray | None = None) -> np.ndarray:
    """Best discounted per-cell value reachable from each cell through known free space."""
    value = evaluator.cgf.reshape(world.width, world.height).copy()
    if robot.is_scout:
        value += evaluator.info[1].reshape(world.width, world.height)
    if claimed is not None:
        value *= 1.0 - claimed
    free = ~world.obstacles
    value[~free] = 0.0
    field_ = value.copy()
    for _ in range(world.width + world.height + 2):
        pad = np.pad(field_, 1)
        best = field_.copy()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx or dy:
                    best = np.maximum(best, pad[1 + dx:1 + dx + world.width,
                                                1 + dy:1 + dy + world.height])
        nxt = np.maximum(value, discount * best)
        nxt[~free] = 0.0
        if np.array_equal(nxt, field_):
            break
        field_ = nxt
    return field_


@dataclass
class _Node:
    cell: Cell
    heading: float
    depth: int
    parent: _Node | None = None
    children: dict[Cell, _Node] = field(default_factory=dict)
    untried: list[Cell] = field(default_factory=list)
    visits: int = 0
    total: float = 0.0


@dataclass
class MCTSTree:
    robot_id: str
    root: _Node
    horizon: int
    plan_stats: dict[tuple[Cell, ...], list[float]] = field(default_factory=dict)
    stamp: int | None = None

    @classmethod
    def fresh(cls, robot_id: str, cell: Cell, heading: float, horizon: int,
              world: GridWorld) -> MCTSTree:
        root = _Node(cell, heading, 0)
        root.untried = world.free_neighbours(cell)
        return cls(robot_id, root, horizon)

    def matches(self, cell: Cell, heading: float, horizon: int, stamp: int | None) -> bool:
        return (self.root.cell == cell and self.horizon == horizon and self.stamp == stamp
                and math.isclose(self.root.heading, heading, abs_tol=1e-12))

    def plan_for(self, waypoints: tuple[Cell, ...]) -> TrajectoryPlan:
        return TrajectoryPlan(self.robot_id, waypoints, True, self.root.cell, self.root.heading)


@dataclass
class RoundResult:
    tree: MCTSTree
    distribution: list[tuple[TrajectoryPlan, float]]
    best_plan: TrajectoryPlan
    best_value: float


def _random_rollout(world: GridWorld, cell: Cell, steps: int, rng) -> list[Cell]:
    out = []
    for _ in range(steps):
        options = world.free_neighbours(cell)
        cell = options[int(rng.integers(len(options)))] if options else cell
        out.append(cell)
    return out


def _softmax(q: np.ndarray, tau: float) -> np.ndarray:
    z = (q - q.max()) / tau
    w = np.exp(z)
    return w / w.sum()


def decmcts_round(own_id: str, belief, tree: MCTSTree | None,
                  received: TeamPlanDistribution | None, config: PlannerConfig,
                  rng: np.random.Generator, *, robots: Mapping[str, RobotState],
                  world: GridWorld, evaluator: PlanEvaluator | None = None,
                  stamp: int | None = None) -> RoundResult:
    """One planning round for ``own_id``.

    ``robots`` holds the team as this robot knows it (poses of teammates are
    only used for robots that have not yet sent a distribution). ``world`` is
    the robot's obstacle map. Teammate plans are resampled from ``received``
    at every rollout. ``tree`` keeps growing only while its root cell and
    ``stamp`` are unchanged; otherwise a fresh tree is started.
    """
    me = robots[own_id]
    cell = world.cell_of(me.pose)
    heading = me.pose.theta
    H = config.horizon
    if tree is None or not tree.matches(cell, heading, H, stamp):
        tree = MCTSTree.fresh(own_id, cell, heading, H, world)
        tree.stamp = stamp
    evaluator = evaluator or PlanEvaluator(belief, robots, world, config)

    mates: list[str] = [r for r in sorted(robots) if r != own_id]
    fixed_mates: list[TrajectoryPlan] = []
    sampled_mates: list[str] = []
    for rid in mates:
        if received is not None and rid in received.plans:
            sampled_mates.append(rid)
        else:
            mc = world.cell_of(robots[rid].pose)
            fixed_mates.append(TrajectoryPlan.stay(rid, mc, H, robots[rid].pose.theta))

    terminal = None
    if config.lookahead_weight > 0:
        claimed = None
        if received is not None and sampled_mates:
            claimed = np.zeros((world.width, world.height))
            for rid in sampled_mates:
                cover = np.zeros(world.width * world.height)
                for plan, prob in received.plans[rid]:
                    cover += prob * evaluator.masks(plan)[1]
                claimed = 1.0 - (1.0 - claimed) * (1.0 - cover.reshape(claimed.shape))
        terminal = config.lookahead_weight * lookahead_field(
            evaluator, me, world, config.lookahead_discount, claimed)

    if config.mcts_iterations == 0:
        plans = []
        for _ in range(config.k_dist):
            wps = tuple(_random_rollout(world, cell, H, rng))
            plans.append(tree.plan_for(wps))
        prob = 1.0 / len(plans)
        dist = [(p, prob) for p in plans]
        return RoundResult(tree, dist, plans[0], float("nan"))

    lo, hi = math.inf, -math.inf
    for _ in range(config.mcts_iterations):
        node = tree.root
        path = [node]
        while node.depth < H:
            if node.untried:
                nxt = node.untried.pop(int(rng.integers(len(node.untried))))
                child = _Node(nxt, move_heading(node.cell, nxt, node.heading), node.depth + 1, node)
                child.untried = world.free_neighbours(nxt) if child.depth < H else []
                node.children[nxt] = child
                node = child
                path.append(node)
                break
            if not node.children:
                break
            spread = (hi - lo) if hi > lo else 1.0
            log_n = math.log(max(node.visits, 1))
            best, best_score = None, -math.inf
            for child in node.children.values():
                mean = child.total / child.visits if child.visits else math.inf
                score = mean + config.c_ucb * spread * math.sqrt(log_n / max(child.visits, 1))
                if score > best_score:
                    best, best_score = child, score
            node = best
            path.append(node)
        prefix = [n.cell for n in path[1:]]
        rollout = _random_rollout(world, node.cell, H - len(prefix), rng)
        waypoints = tuple(prefix + rollout)
        own_plan = tree.plan_for(waypoints)
        team = [own_plan, *fixed_mates]
        for rid in sampled_mates:
            team.append(received.sample(rid, rng))
        value = evaluator.value(team)
        if terminal is not None:
            end = waypoints[-1]
            value += float(terminal[end])
        lo, hi = min(lo, value), max(hi, value)
        for n in path:
            n.visits += 1
            n.total += value
        stats = tree.plan_stats.setdefault(waypoints, [0.0, 0])
        stats[0] += value
        stats[1] += 1

    ranked = sorted(tree.plan_stats.items(), key=lambda kv: (-kv[1][0] / kv[1][1], kv[0]))
    top = ranked[: config.k_dist]
    q = np.array([s / c for _, (s, c) in top])
    probs = _softmax(q, config.temperature)
    # renormalise in float64 so the sum is exact to rounding
    probs = probs / probs.sum()
    dist = [(tree.plan_for(wps), float(pr)) for (wps, _), pr in zip(top, probs)]
    best_wps, (s, c) = top[0]
    return RoundResult(tree, dist, tree.plan_for(best_wps), s / c)
