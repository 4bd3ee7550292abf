"""MI-UCB acquisition: information gain of scout scans plus the reward CGF.

Both terms are in nats; mutual information is reported in bits by
:func:`mutual_information` and converted with ``ln 2`` inside :func:`mi_ucb`.
"""
from __future__ import annotations

import math
from collections.abc import Iterable, Mapping

import numpy as np

from scouttask.belief import OccupancyBelief
from scouttask.planner.types import PlannerConfig, TrajectoryPlan
from scouttask.world import Cell, GridWorld, RobotState, SensorKind, visible_arrays

LN2 = math.log(2.0)
E_MINUS_1 = math.e - 1.0


def _probs(belief) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(belief, OccupancyBelief):
        return belief.probabilities(), belief.confirmed
    p = np.asarray(belief, dtype=float)
    return p, np.zeros(p.shape, dtype=bool)


# -- coverage ---------------------------------------------------------------

def plan_masks(plan: TrajectoryPlan, robot: RobotState, world: GridWorld):
    """Dense (scan counts, confirm mask) for one robot's plan."""
    counts = np.zeros((world.width, world.height), dtype=np.int64)
    confirm = np.zeros((world.width, world.height), dtype=bool)
    scout = robot.sensor(SensorKind.SCOUT_LONG_RANGE)
    task = robot.sensor(SensorKind.TASK_CONFIRM)
    for cell, heading in plan.poses():
        pose = world.pose_at(cell, heading)
        if scout is not None:
            xs, ys, _ = visible_arrays(world, pose, scout)
            counts[xs, ys] += 1
        if task is not None:
            xs, ys, _ = visible_arrays(world, pose, task)
            confirm[xs, ys] = True
    return counts, confirm


def coverage_arrays(plans: Iterable[TrajectoryPlan], robots: Mapping[str, RobotState],
                    world: GridWorld) -> tuple[np.ndarray, np.ndarray]:
    counts = np.zeros((world.width, world.height), dtype=np.int64)
    confirm = np.zeros((world.width, world.height), dtype=bool)
    for plan in plans:
        c, m = plan_masks(plan, robots[plan.robot_id], world)
        counts += c
        confirm |= m
    return counts, confirm


def coverage(plans: Iterable[TrajectoryPlan], robots: Mapping[str, RobotState],
             world: GridWorld) -> tuple[dict[Cell, int], frozenset[Cell]]:
    """Scout scan counts per cell and the union of confirm-sensor footprints."""
    counts, confirm = coverage_arrays(plans, robots, world)
    xs, ys = np.nonzero(counts)
    scout_obs = {(int(x), int(y)): int(counts[x, y]) for x, y in zip(xs, ys)}
    cx, cy = np.nonzero(confirm)
    return scout_obs, frozenset(zip(cx.tolist(), cy.tolist()))


# -- information term -------------------------------------------------------

def _binom_pmf(k: int, q: float) -> np.ndarray:
    s = np.arange(k + 1)
    comb = np.array([math.comb(k, int(i)) for i in s], dtype=float)
    return comb * q**s * (1.0 - q) ** (k - s)


def _entropy_bits(pmf: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pmf > 0, -pmf * np.log2(pmf), 0.0)
    return terms.sum(axis=-1)


def cell_information_bits(p: np.ndarray, k: int, p_d: float, p_f: float) -> np.ndarray:
    """I(X; Y_1..Y_k) for X ~ Bern(p) seen through k iid binary channels, via the
    count of positives as sufficient statistic."""
    p = np.asarray(p, dtype=float)
    if k <= 0:
        return np.zeros_like(p)
    b1 = _binom_pmf(k, p_d)
    b0 = _binom_pmf(k, p_f)
    mix = p[..., None] * b1 + (1.0 - p[..., None]) * b0
    info = _entropy_bits(mix) - p * _entropy_bits(b1) - (1.0 - p) * _entropy_bits(b0)
    return np.maximum(info, 0.0)


def information_table_bits(p: np.ndarray, kmax: int, p_d: float, p_f: float) -> np.ndarray:
    """Row k holds the per-cell information of k scans (row 0 is zero)."""
    p = np.asarray(p, dtype=float).ravel()
    table = np.zeros((kmax + 1, p.size))
    for k in range(1, kmax + 1):
        table[k] = cell_information_bits(p, k, p_d, p_f)
    return table


def mutual_information(belief, scout_obs, channel: tuple[float, float]) -> float:
    """I(E; Y | A) in bits for independent cells observed ``scout_obs[cell]`` times."""
    p_d, p_f = channel
    p, _ = _probs(belief)
    if isinstance(scout_obs, Mapping):
        items = [(cell, int(k)) for cell, k in scout_obs.items()]
    else:
        arr = np.asarray(scout_obs)
        xs, ys = np.nonzero(arr)
        items = [((int(x), int(y)), int(arr[x, y])) for x, y in zip(xs, ys)]
    if any(k < 0 for _, k in items):
        raise ValueError("observation counts must be >= 0")
    items = [(cell, k) for cell, k in items if k > 0]
    by_k: dict[int, list[Cell]] = {}
    for cell, k in items:
        by_k.setdefault(k, []).append(cell)
    total = 0.0
    for k in sorted(by_k):
        cells = by_k[k]
        pc = p[tuple(np.array(cells).T)]
        total += float(cell_information_bits(pc, k, p_d, p_f).sum())
    return total


# -- reward term ------------------------------------------------------------

def cell_cgf(p: np.ndarray) -> np.ndarray:
    """log E exp(B) for B ~ Bern(p)."""
    return np.log1p(np.asarray(p, dtype=float) * E_MINUS_1)


def reward_cgf(belief, confirm_cells) -> float:
    """log E exp R in nats, R = number of unconfirmed targets inside ``confirm_cells``."""
    p, confirmed = _probs(belief)
    mask = _as_mask(confirm_cells, p.shape) & ~confirmed
    return float(cell_cgf(p[mask]).sum())


def _as_mask(cells, shape) -> np.ndarray:
    if isinstance(cells, np.ndarray) and cells.dtype == bool:
        return cells
    mask = np.zeros(shape, dtype=bool)
    cells = list(cells)
    if cells:
        idx = np.array(cells).T
        mask[idx[0], idx[1]] = True
    return mask


def scout_channel(robots: Mapping[str, RobotState]) -> tuple[float, float] | None:
    for rid in sorted(robots):
        s = robots[rid].sensor(SensorKind.SCOUT_LONG_RANGE)
        if s is not None:
            return (s.p_detect, s.p_false)
    return None


def mi_ucb(belief, plans: Iterable[TrajectoryPlan], config: PlannerConfig,
           robots: Mapping[str, RobotState], world: GridWorld,
           channel: tuple[float, float] | None = None) -> float:
    """(1/delta) * I(E; Y | A) + log E exp R(E, A), in nats."""
    plans = list(plans)
    scout_obs, confirm = coverage(plans, robots, world)
    channel = channel or scout_channel(robots)
    info = mutual_information(belief, scout_obs, channel) if channel and scout_obs else 0.0
    return info * LN2 / config.delta + reward_cgf(belief, confirm)


def posterior_expected_reward(belief, confirm_cells, outcomes: Mapping[Cell, object],
                              channel: tuple[float, float]) -> float:
    """E[R | Y]: posterior target probability summed over unconfirmed confirm cells.

    ``outcomes`` maps a cell to its scan results, either a sequence of booleans
    or a ``(positives, scans)`` pair.
    """
    p_d, p_f = channel
    p, confirmed = _probs(belief)
    with np.errstate(divide="ignore"):
        logit = np.log(p) - np.log1p(-p)
    pos_llr = math.log(p_d) - math.log(p_f) if p_f > 0 else math.inf
    neg_llr = math.log1p(-p_d) - math.log1p(-p_f) if p_d < 1 else -math.inf
    logit = logit.copy()
    for cell, obs in outcomes.items():
        if isinstance(obs, tuple) and len(obs) == 2 and not isinstance(obs[0], (bool, np.bool_)):
            pos, k = int(obs[0]), int(obs[1])
        else:
            seq = [bool(o) for o in obs]
            pos, k = sum(seq), len(seq)
        neg = k - pos
        upd = 0.0
        if pos:
            upd += pos * pos_llr
        if neg:
            upd += neg * neg_llr
        logit[cell] += upd
    post = 1.0 / (1.0 + np.exp(-logit))
    mask = _as_mask(confirm_cells, p.shape) & ~confirmed
    return float(post[mask].sum())
