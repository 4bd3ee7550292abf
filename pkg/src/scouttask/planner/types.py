from __future__ import annotations

import math
from dataclasses import dataclass, field

from scouttask.world import Cell, GridWorld

PROB_TOL = 1e-9


class PlannerError(ValueError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    delta: float = 0.1
    horizon: int = 6
    mcts_iterations: int = 60
    c_ucb: float = 1.0
    k_dist: int = 5
    exchange_period: int = 3
    temperature: float = 1.0
    # value of the best belief-weighted cell reachable beyond the horizon,
    # discounted per move; 0 disables it (pure MI-UCB returns)
    lookahead_weight: float = 0.0
    lookahead_discount: float = 0.95

    def __post_init__(self) -> None:
        if not 0 < self.delta < 1:
            raise PlannerError("delta must be in (0, 1)")
        if self.horizon < 1:
            raise PlannerError("horizon must be >= 1")
        if self.mcts_iterations < 0 or self.k_dist < 1 or self.exchange_period < 1:
            raise PlannerError("mcts_iterations >= 0, k_dist >= 1, exchange_period >= 1")
        if self.c_ucb < 0 or self.temperature <= 0:
            raise PlannerError("c_ucb must be >= 0 and temperature > 0")
        if self.lookahead_weight < 0 or not 0 < self.lookahead_discount < 1:
            raise PlannerError("lookahead_weight >= 0 and lookahead_discount in (0, 1)")


def _adjacent(a: Cell, b: Cell) -> bool:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1])) <= 1


def move_heading(prev: Cell, nxt: Cell, heading: float) -> float:
    if prev == nxt:
        return heading
    return math.atan2(nxt[1] - prev[1], nxt[0] - prev[0])


@dataclass(frozen=True)
class TrajectoryPlan:
    """Future cells for ticks 1..H, starting from ``origin`` facing ``heading``."""

    robot_id: str
    waypoints: tuple[Cell, ...]
    feasible: bool = True
    origin: Cell | None = None
    heading: float = 0.0

    def __post_init__(self) -> None:
        wps = tuple((int(c[0]), int(c[1])) for c in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        if self.origin is not None:
            object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))
        chain = ([self.origin] if self.origin is not None else []) + list(wps)
        for a, b in zip(chain, chain[1:]):
            if not _adjacent(a, b):
                raise PlannerError(f"plan for {self.robot_id}: {a} -> {b} is not an 8-connected move")

    @property
    def horizon(self) -> int:
        return len(self.waypoints)

    @property
    def start(self) -> Cell:
        return self.origin if self.origin is not None else self.waypoints[0]

    def poses(self) -> list[tuple[Cell, float]]:
        """(cell, heading) at each waypoint; heading follows the last move."""
        out = []
        prev, heading = self.start, self.heading
        for c in self.waypoints:
            heading = move_heading(prev, c, heading)
            out.append((c, heading))
            prev = c
        return out

    def check_feasible(self, world: GridWorld) -> bool:
        return all(world.is_free(c) for c in self.waypoints)

    @property
    def key(self) -> tuple:
        return (self.robot_id, self.origin, round(self.heading, 12), self.waypoints)

    @classmethod
    def stay(cls, robot_id: str, cell: Cell, horizon: int, heading: float = 0.0) -> TrajectoryPlan:
        return cls(robot_id, (cell,) * horizon, True, cell, heading)


@dataclass
class TeamPlanDistribution:
    plans: dict[str, list[tuple[TrajectoryPlan, float]]] = field(default_factory=dict)
    stamp: int = 0

    def __post_init__(self) -> None:
        for rid, entries in self.plans.items():
            self._check(rid, entries)

    @staticmethod
    def _check(rid: str, entries) -> None:
        if not entries:
            raise PlannerError(f"empty distribution for {rid}")
        total = sum(p for _, p in entries)
        if abs(total - 1.0) > PROB_TOL or any(p < 0 for _, p in entries):
            raise PlannerError(f"distribution for {rid} sums to {total!r}")

    def set(self, robot_id: str, entries: list[tuple[TrajectoryPlan, float]], k_dist: int | None = None) -> None:
        if k_dist is not None and len(entries) > k_dist:
            raise PlannerError(f"distribution for {robot_id} exceeds k_dist={k_dist}")
        self._check(robot_id, entries)
        self.plans[robot_id] = list(entries)

    def merge(self, other: TeamPlanDistribution, exclude: str | None = None) -> None:
        for rid, entries in other.plans.items():
            if rid != exclude:
                self.plans[rid] = list(entries)
        self.stamp = max(self.stamp, other.stamp)

    def sample(self, robot_id: str, rng) -> TrajectoryPlan:
        entries = self.plans[robot_id]
        if len(entries) == 1:
            return entries[0][0]
        u = rng.random()
        acc = 0.0
        for plan, p in entries:
            acc += p
            if u < acc:
                return plan
        return entries[-1][0]
