"""Ground-truth grid world, robot/sensor descriptions and stochastic sensor models."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from scouttask.belief import Detection, DetectionBatch
from scouttask.posegraph.se2 import Pose2, wrap_angles

Cell = tuple[int, int]


class SensorKind(str, enum.Enum):
    SCOUT_LONG_RANGE = "scout_long_range"
    TASK_CONFIRM = "task_confirm"


class RobotClass(str, enum.Enum):
    TASK_ONLY = "task_only"
    SCOUT_AND_TASK = "scout_and_task"


class WorldError(ValueError):
    pass


@dataclass(frozen=True)
class SensorSpec:
    """Binary target classifier attached to a range/FOV footprint.

    ``fov`` is ``None`` for an omnidirectional sensor, otherwise the full cone
    angle in radians centred on the robot heading.
    """

    kind: SensorKind
    max_range: float
    fov: float | None = None
    p_detect: float = 0.9
    p_false: float = 0.05
    range_decay: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SensorKind(self.kind))
        if not self.max_range > 0:
            raise WorldError(f"{self.kind.value}: max_range must be > 0")
        if self.fov is not None and not 0 < self.fov <= 2 * math.pi:
            raise WorldError(f"{self.kind.value}: cone angle must be in (0, 2pi]")
        if not 0 < self.p_detect <= 1 or not 0 <= self.p_false < 1:
            raise WorldError(f"{self.kind.value}: p_detect must be in (0,1], p_false in [0,1)")
        if not 0 <= self.range_decay <= 1:
            raise WorldError(f"{self.kind.value}: range_decay must be in [0,1]")
        # the channel must stay informative at the edge of the footprint too
        if not self.p_detect * (1.0 - self.range_decay) > self.p_false:
            raise WorldError(
                f"{self.kind.value}: p_detect*(1-range_decay) must exceed p_false"
            )

    @property
    def omnidirectional(self) -> bool:
        return self.fov is None

    def effective_p_detect(self, r: np.ndarray | float) -> np.ndarray | float:
        return self.p_detect * (1.0 - self.range_decay * np.asarray(r) / self.max_range)


def default_scout_sensor(**overrides) -> SensorSpec:
    params = dict(max_range=100.0, fov=None, p_detect=0.9, p_false=0.05, range_decay=0.5)
    params.update(overrides)
    return SensorSpec(SensorKind.SCOUT_LONG_RANGE, **params)


def default_confirm_sensor(**overrides) -> SensorSpec:
    params = dict(max_range=10.0, fov=math.pi / 2, p_detect=0.95, p_false=0.01, range_decay=0.0)
    params.update(overrides)
    return SensorSpec(SensorKind.TASK_CONFIRM, **params)


@dataclass
class RobotState:
    robot_id: str
    robot_class: RobotClass
    pose: Pose2
    sensors: tuple[SensorSpec, ...]

    def __post_init__(self) -> None:
        self.robot_class = RobotClass(self.robot_class)
        self.sensors = tuple(self.sensors)
        kinds = {s.kind for s in self.sensors}
        if len(kinds) != len(self.sensors):
            raise WorldError(f"robot {self.robot_id}: duplicate sensor kinds")
        if self.robot_class is RobotClass.SCOUT_AND_TASK:
            expected = {SensorKind.SCOUT_LONG_RANGE, SensorKind.TASK_CONFIRM}
        else:
            expected = {SensorKind.TASK_CONFIRM}
        if kinds != expected:
            raise WorldError(
                f"robot {self.robot_id}: class {self.robot_class.value} requires sensors "
                f"{sorted(k.value for k in expected)}"
            )

    def sensor(self, kind: SensorKind) -> SensorSpec | None:
        for s in self.sensors:
            if s.kind is kind:
                return s
        return None

    @property
    def is_scout(self) -> bool:
        return self.robot_class is RobotClass.SCOUT_AND_TASK


@dataclass(frozen=True, eq=False)
class GridWorld:
    """Planar grid; ``obstacles`` is indexed ``[x, y]`` with shape (width, height)."""

    width: int
    height: int
    cell_size: float
    obstacles: np.ndarray
    targets: tuple[tuple[str, Cell], ...] = ()
    rng_seed: int = 0
    landmarks: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise WorldError("world dimensions must be positive")
        if not self.cell_size > 0:
            raise WorldError("cell_size must be > 0")
        obstacles = np.array(self.obstacles, dtype=bool)
        if obstacles.shape != (self.width, self.height):
            raise WorldError(
                f"obstacle grid shape {obstacles.shape} != ({self.width}, {self.height})"
            )
        obstacles.setflags(write=False)
        object.__setattr__(self, "obstacles", obstacles)
        targets = tuple((str(tid), (int(c[0]), int(c[1]))) for tid, c in self.targets)
        ids = [tid for tid, _ in targets]
        if len(set(ids)) != len(ids):
            raise WorldError("target ids must be unique")
        for tid, cell in targets:
            if not self.in_bounds(cell):
                raise WorldError(f"target {tid} at {cell} is out of bounds")
            if obstacles[cell]:
                raise WorldError(f"target {tid} at {cell} is inside an obstacle")
        object.__setattr__(self, "targets", targets)
        landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 2)
        landmarks.setflags(write=False)
        object.__setattr__(self, "landmarks", landmarks)
        target_mask = np.zeros((self.width, self.height), dtype=bool)
        for _, cell in targets:
            target_mask[cell] = True
        target_mask.setflags(write=False)
        object.__setattr__(self, "target_mask", target_mask)
        object.__setattr__(self, "_vis_cache", {})

    # -- geometry -----------------------------------------------------------
    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.obstacles[cell]

    def cell_of(self, pose: Pose2) -> Cell:
        return (int(math.floor(pose.x / self.cell_size)), int(math.floor(pose.y / self.cell_size)))

    def cell_centre(self, cell: Cell) -> tuple[float, float]:
        return ((cell[0] + 0.5) * self.cell_size, (cell[1] + 0.5) * self.cell_size)

    def pose_at(self, cell: Cell, theta: float = 0.0) -> Pose2:
        x, y = self.cell_centre(cell)
        return Pose2(x, y, theta)

    def target_at(self, cell: Cell) -> str | None:
        for tid, c in self.targets:
            if c == cell:
                return tid
        return None

    def with_obstacles(self, obstacles: np.ndarray) -> GridWorld:
        """Same geometry with a different obstacle layer and no targets (a robot's map)."""
        return GridWorld(
            self.width, self.height, self.cell_size, obstacles, (), self.rng_seed, self.landmarks
        )

    def free_neighbours(self, cell: Cell, include_stay: bool = True) -> list[Cell]:
        out = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0 and not include_stay:
                    continue
                c = (cell[0] + dx, cell[1] + dy)
                if self.is_free(c):
                    out.append(c)
        return out


def generate_landmarks(
    width: int, height: int, cell_size: float, obstacles: np.ndarray, per_cell: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Scatter point landmarks uniformly over free cells (Poisson count per world)."""
    free = np.argwhere(~np.asarray(obstacles, dtype=bool))
    n = int(rng.poisson(per_cell * len(free))) if len(free) else 0
    if n == 0:
        return np.zeros((0, 2))
    cells = free[rng.integers(0, len(free), size=n)]
    return (cells + rng.random((n, 2))) * cell_size


# -- visibility -------------------------------------------------------------

def _footprint(world: GridWorld, pose: Pose2, max_range: float, fov: float | None,
               see_obstacles: bool):
    key = (round(pose.x, 9), round(pose.y, 9),
           round(pose.theta, 9) if fov is not None else None,
           float(max_range), fov, see_obstacles)
    cached = world._vis_cache.get(key)
    if cached is not None:
        return cached
    origin = world.cell_of(pose)
    if not world.in_bounds(origin):
        raise WorldError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is outside the world")
    ox, oy = origin
    cs = world.cell_size
    reach = int(math.ceil(max_range / cs)) + 1
    xs = np.arange(max(0, ox - reach), min(world.width, ox + reach + 1))
    ys = np.arange(max(0, oy - reach), min(world.height, oy + reach + 1))
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    dxm = (gx + 0.5) * cs - pose.x
    dym = (gy + 0.5) * cs - pose.y
    dist = np.hypot(dxm, dym)
    ok = dist <= max_range + 1e-9
    if fov is not None:
        bearing = wrap_angles(np.arctan2(dym, dxm) - pose.theta)
        ok &= (np.abs(bearing) <= fov / 2 + 1e-12) | ((gx == ox) & (gy == oy))
    gx, gy, dist = gx[ok], gy[ok], dist[ok]

    # integer ray traversal from the origin cell to each candidate cell
    dx, dy = gx - ox, gy - oy
    steps = np.maximum(np.abs(dx), np.abs(dy))
    longest = int(steps.max()) if steps.size else 0
    blocked = np.zeros(gx.shape, dtype=bool)
    if longest > 1:
        k = np.arange(1, longest)
        safe = np.maximum(steps, 1)[:, None]
        t = k[None, :] / safe
        px = ox + np.floor(dx[:, None] * t + 0.5).astype(int)
        py = oy + np.floor(dy[:, None] * t + 0.5).astype(int)
        inner = k[None, :] < steps[:, None]
        px = np.where(inner, px, ox)
        py = np.where(inner, py, oy)
        blocked = (world.obstacles[px, py] & inner).any(axis=1)
    keep = ~blocked
    own_obstacle = world.obstacles[gx, gy]
    if not see_obstacles:
        keep &= ~own_obstacle
    result = (gx[keep], gy[keep], dist[keep])
    for arr in result:
        arr.setflags(write=False)
    world._vis_cache[key] = result
    return result


def visible_arrays(world: GridWorld, pose: Pose2, sensor: SensorSpec):
    """(xs, ys, ranges) of visible cells, in x-major order."""
    return _footprint(world, pose, sensor.max_range, sensor.fov, False)


def visible_mask(world: GridWorld, pose: Pose2, sensor: SensorSpec) -> np.ndarray:
    xs, ys, _ = visible_arrays(world, pose, sensor)
    mask = np.zeros((world.width, world.height), dtype=bool)
    mask[xs, ys] = True
    return mask


def visible_cells(world: GridWorld, pose: Pose2, sensor: SensorSpec) -> frozenset[Cell]:
    """Cells within range and field of view with an unobstructed line of sight.

    Obstacle cells themselves are never returned; a cell is hidden when any
    cell strictly between it and the sensor's cell (on the rasterised ray) is
    an obstacle.
    """
    xs, ys, _ = visible_arrays(world, pose, sensor)
    return frozenset(zip(xs.tolist(), ys.tolist()))


def observed_obstacles(world: GridWorld, pose: Pose2, radius: float) -> np.ndarray:
    """Mask of obstacle cells whose face is in line of sight within ``radius``."""
    xs, ys, _ = _footprint(world, pose, radius, None, True)
    mask = np.zeros((world.width, world.height), dtype=bool)
    hit = world.obstacles[xs, ys]
    mask[xs[hit], ys[hit]] = True
    return mask


# -- stochastic sensing -----------------------------------------------------

def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def sample_detection_batch(
    world: GridWorld, state: RobotState, sensor: SensorSpec, tick: int,
    rng: np.random.Generator, seq_start: int = 0,
) -> DetectionBatch:
    if sensor not in state.sensors:
        raise WorldError(f"sensor {sensor.kind.value} does not belong to {state.robot_id}")
    xs, ys, ranges = visible_arrays(world, state.pose, sensor)
    # channel parameters travel as float32 on the wire; quantise at the source
    p_d = _f32(sensor.effective_p_detect(ranges))
    p_f = _f32(np.full(xs.shape, sensor.p_false))
    has_target = world.target_mask[xs, ys]
    u = rng.random(xs.shape[0])
    positive = np.where(has_target, u < p_d, u < p_f)
    seq = np.arange(seq_start, seq_start + xs.shape[0], dtype=np.int64)
    return DetectionBatch(
        origin_robot=state.robot_id,
        seq=seq,
        xs=xs.astype(np.int64),
        ys=ys.astype(np.int64),
        positive=positive,
        p_detect=p_d,
        p_false=p_f,
        sensor_kind=sensor.kind.value,
        tick=tick,
    )


def sample_detections(
    world: GridWorld, state: RobotState, sensor: SensorSpec, tick: int,
    rng: np.random.Generator, seq_start: int = 0,
) -> list[Detection]:
    """One Bernoulli classifier outcome per visible cell."""
    return sample_detection_batch(world, state, sensor, tick, rng, seq_start).to_list()


def confirm_targets(
    world: GridWorld, state: RobotState, tick: int, failure_rate: float,
    rng: np.random.Generator,
) -> list[str]:
    """Targets in the confirm footprint, each dropped independently with ``failure_rate``."""
    return confirm_targets_detail(world, state, tick, failure_rate, rng)[0]


def confirm_targets_detail(
    world: GridWorld, state: RobotState, tick: int, failure_rate: float,
    rng: np.random.Generator,
) -> tuple[list[str], list[str]]:
    sensor = state.sensor(SensorKind.TASK_CONFIRM)
    if sensor is None:
        raise WorldError(f"robot {state.robot_id} has no confirmation sensor")
    if not 0 <= failure_rate <= 1:
        raise WorldError("failure_rate must be in [0, 1]")
    if not world.targets:
        return [], []
    mask = visible_mask(world, state.pose, sensor)
    confirmed, missed = [], []
    for tid, cell in world.targets:
        if not mask[cell]:
            continue
        # draw for every candidate so the stream is independent of failure_rate
        if rng.random() < failure_rate:
            missed.append(tid)
        else:
            confirmed.append(tid)
    return confirmed, missed
