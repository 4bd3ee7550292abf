from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from scouttask.world import (
    GridWorld,
    RobotClass,
    RobotState,
    default_confirm_sensor,
    default_scout_sensor,
)

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
FIXTURES = Path(__file__).resolve().parent / "fixtures"


def empty_world(w: int, h: int, cell_size: float = 1.0, targets=(), obstacles=None) -> GridWorld:
    obs = np.zeros((w, h), dtype=bool) if obstacles is None else np.asarray(obstacles, dtype=bool)
    return GridWorld(w, h, cell_size, obs, tuple(targets))


def scout(robot_id: str, world: GridWorld, cell, theta: float = 0.0, **sensor) -> RobotState:
    s = default_scout_sensor(**{"max_range": 100.0, "range_decay": 0.0, **sensor})
    c = default_confirm_sensor(max_range=1.5, fov=None)
    return RobotState(robot_id, RobotClass.SCOUT_AND_TASK, world.pose_at(cell, theta), (s, c))


def tasker(robot_id: str, world: GridWorld, cell, theta: float = 0.0, **sensor) -> RobotState:
    c = default_confirm_sensor(**{"max_range": 1.5, "fov": None, **sensor})
    return RobotState(robot_id, RobotClass.TASK_ONLY, world.pose_at(cell, theta), (c,))


def wrap(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def two_robot_stitch_case(seed: int, noise: float, n_landmarks: int = 220, scan_range: float = 25.0,
                          offset: tuple[float, float] = (0.6, -0.4)):
    """Two robots whose paths cross one shared spot in a common landmark field.

    Odometry is exact, so the only error source is landmark noise. Returns
    (gi, gj, zj, own_scans, true offset of robot b's frame in robot a's frame).
    """
    from scouttask.posegraph import NODE_STRIDE, Pose2, PoseGraph, make_scan

    rng = np.random.default_rng(seed)
    landmarks = rng.uniform(-10.0, 90.0, size=(n_landmarks, 2))
    start_a = Pose2(5.0, 8.0, 0.3)
    start_b = Pose2(70.0, 60.0, -2.4)
    # a walks towards the meeting spot; b arrives there from the other side
    meet = Pose2(40.0, 35.0, 0.0)

    def path(start: Pose2, goal: Pose2, steps: int, heading: float) -> list[Pose2]:
        out = []
        for k in range(steps + 1):
            f = k / steps
            out.append(Pose2(start.x + f * (goal.x - start.x), start.y + f * (goal.y - start.y),
                             start.theta + f * (heading - start.theta)))
        return out

    world_a = path(start_a, meet, 8, 1.1)
    world_b = path(start_b, Pose2(meet.x + offset[0], meet.y + offset[1], 0.0), 6, -0.7)

    def graph_and_scans(owner: str, index: int, poses: list[Pose2]):
        g = PoseGraph()
        scans = []
        base = poses[0]
        prev = None
        for k, p in enumerate(poses):
            nid = index * NODE_STRIDE + k
            g.add_node(nid, owner, base.between(p))
            if prev is not None:
                g.add_edge(nid - 1, nid, prev.between(p))
            prev = p
            d = np.hypot(landmarks[:, 0] - p.x, landmarks[:, 1] - p.y)
            local = p.inverse().transform_points(landmarks[d <= scan_range])
            local = local + noise * rng.normal(size=local.shape)
            scans.append(make_scan(owner, nid, local, scan_id=k, tick=k))
        return g, scans

    gi, scans_a = graph_and_scans("a", 0, world_a)
    gj, scans_b = graph_and_scans("b", 1, world_b)
    truth = start_a.between(start_b)
    return gi, gj, scans_b[-1], scans_a, truth
