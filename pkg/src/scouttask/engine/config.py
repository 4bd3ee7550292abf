"""Scenario files: YAML validated by pydantic, with errors anchored to source lines.

Schema (all sections except ``world`` and ``robots`` are optional)::

    name: brisbane
    seed: 7
    ticks: 600                 # tick budget
    failure_rate: 0.0          # probability a confirmation is silently lost
    stitch_period: 20          # K_stitch, ticks between scan/pose-graph messages
    plan_period: null          # default max(1, horizon // 2)
    digest_period: 10          # ticks between detection digests (0 disables)
    digest_size: 200
    world:
      width: 40                # cells; may be omitted when obstacles.grid is given
      height: 40
      cell_size: 5.0           # metres per cell
      obstacles:
        grid: |                # '#' obstacle, anything else free; first line is y = 0
          ....
        rects: [[x0, y0, x1, y1]]   # inclusive cell rectangles
      targets:
        - {id: t1, cell: [10, 12]}
      landmarks_per_cell: 0.5
    belief: {prior: 0.01}
    sensors:                   # team-wide defaults, per-robot overrides allowed
      scout_long_range: {max_range: 100, fov: omni, p_detect: 0.9, p_false: 0.05, range_decay: 0.5}
      task_confirm: {max_range: 10, fov: 1.5708, p_detect: 0.95, p_false: 0.01}
    robots:
      - {id: r1, class: scout_and_task, start: [2, 2], heading: 0.0}
    comms: {drop_prob: 0.0, latency: [0, 0], bandwidth: inf, links: []}
    planner: {delta: 0.1, horizon: 6, mcts_iterations: 60, ...}
    odometry: {sigma: [0.1, 0.1, 0.05]}
    mapping: {scan_range: 30.0, landmark_noise: 0.05, s_star: 0.75, ...}
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from scouttask.comms.bus import LinkModel, LinkOverride
from scouttask.planner.types import PlannerConfig
from scouttask.rng import shared_stream
from scouttask.world import (
    GridWorld,
    RobotClass,
    SensorKind,
    SensorSpec,
    default_confirm_sensor,
    default_scout_sensor,
    generate_landmarks,
)


class ConfigError(ValueError):
    """Invalid scenario; ``messages`` are ``file:line: location: reason`` strings."""

    def __init__(self, messages: list[str]) -> None:
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SensorModel(_Model):
    max_range: float | None = None
    fov: float | Literal["omni", "omnidirectional"] | None = None
    p_detect: float | None = None
    p_false: float | None = None
    range_decay: float | None = None


class SensorsModel(_Model):
    scout_long_range: SensorModel = SensorModel()
    task_confirm: SensorModel = SensorModel()


class TargetModel(_Model):
    id: str
    cell: tuple[int, int]


class ObstaclesModel(_Model):
    grid: str | None = None
    rects: list[tuple[int, int, int, int]] = []


class WorldModel(_Model):
    width: int | None = Field(None, ge=1)
    height: int | None = Field(None, ge=1)
    cell_size: float = Field(1.0, gt=0)
    obstacles: ObstaclesModel = ObstaclesModel()
    targets: list[TargetModel] = []
    landmarks_per_cell: float = Field(0.5, ge=0)


class RobotModel(_Model):
    id: str
    class_: RobotClass = Field(alias="class")
    start: tuple[int, int]
    heading: float = 0.0
    sensors: SensorsModel | None = None

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class LinkModelCfg(_Model):
    from_: str = Field(alias="from")
    to: str
    drop_prob: float | None = Field(None, ge=0, le=1)
    bandwidth: float | None = Field(None, gt=0)

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class CommsModel(_Model):
    drop_prob: float = Field(0.0, ge=0, le=1)
    latency: tuple[int, int] = (0, 0)
    bandwidth: float = Field(math.inf, gt=0)
    links: list[LinkModelCfg] = []
    trace: bool = False

    @field_validator("latency")
    @classmethod
    def _latency(cls, v):
        if v[0] < 0 or v[1] < v[0]:
            raise ValueError("latency must be [min, max] with 0 <= min <= max")
        return v


class PlannerModel(_Model):
    delta: float = Field(0.1, gt=0, lt=1)
    horizon: int = Field(6, ge=1)
    mcts_iterations: int = Field(60, ge=0)
    c_ucb: float = Field(1.0, ge=0)
    k_dist: int = Field(5, ge=1)
    exchange_period: int = Field(3, ge=1)
    temperature: float = Field(1.0, gt=0)
    lookahead_weight: float = Field(0.0, ge=0)
    lookahead_discount: float = Field(0.95, gt=0, lt=1)


class BeliefModel(_Model):
    prior: float = Field(0.01, gt=0, lt=1)


class OdometryModel(_Model):
    sigma: tuple[float, float, float] = (0.1, 0.1, 0.05)

    @field_validator("sigma")
    @classmethod
    def _positive(cls, v):
        if any(not s > 0 for s in v):
            raise ValueError("odometry sigma components must be > 0")
        return v


class MappingModel(_Model):
    scan_range: float = Field(30.0, gt=0)
    landmark_noise: float = Field(0.05, ge=0)
    s_star: float = Field(0.75, ge=0, le=1)
    inlier_threshold: float = Field(0.5, gt=0)
    min_inliers: int = Field(4, ge=2)


class ScenarioConfig(_Model):
    name: str = "scenario"
    seed: int = Field(0, ge=0)
    ticks: int = Field(600, ge=0)
    failure_rate: float = Field(0.0, ge=0, le=1)
    stitch_period: int = Field(20, ge=1)
    plan_period: int | None = Field(None, ge=1)
    digest_period: int = Field(10, ge=0)
    digest_size: int = Field(200, ge=0)
    world: WorldModel
    belief: BeliefModel = BeliefModel()
    sensors: SensorsModel = SensorsModel()
    robots: list[RobotModel]
    comms: CommsModel = CommsModel()
    planner: PlannerModel = PlannerModel()
    odometry: OdometryModel = OdometryModel()
    mapping: MappingModel = MappingModel()

    @model_validator(mode="after")
    def _semantics(self):
        errors: list[tuple[tuple, str]] = []
        if not self.robots:
            errors.append((("robots",), "at least one robot is required"))
        ids = [r.id for r in self.robots]
        for i, rid in enumerate(ids):
            if ids.index(rid) != i:
                errors.append((("robots", i, "id"), f"duplicate robot id {rid!r}"))
        tids = [t.id for t in self.world.targets]
        for i, tid in enumerate(tids):
            if tids.index(tid) != i:
                errors.append((("world", "targets", i, "id"), f"duplicate target id {tid!r}"))
        try:
            obstacles = obstacle_grid(self.world)
        except ValueError as exc:
            errors.append((("world", "obstacles"), str(exc)))
            obstacles = None
        if obstacles is not None:
            w, h = obstacles.shape
            for i, t in enumerate(self.world.targets):
                if not (0 <= t.cell[0] < w and 0 <= t.cell[1] < h):
                    errors.append((("world", "targets", i, "cell"), f"target {t.id} is out of bounds"))
                elif obstacles[t.cell]:
                    errors.append((("world", "targets", i, "cell"), f"target {t.id} is inside an obstacle"))
            starts = {}
            for i, r in enumerate(self.robots):
                c = tuple(r.start)
                if not (0 <= c[0] < w and 0 <= c[1] < h):
                    errors.append((("robots", i, "start"), f"robot {r.id} starts out of bounds"))
                elif obstacles[c]:
                    errors.append((("robots", i, "start"), f"robot {r.id} starts inside an obstacle"))
                elif c in starts:
                    errors.append((("robots", i, "start"),
                                   f"robot {r.id} starts on the same cell as {starts[c]}"))
                starts.setdefault(c, r.id)
        names = set(ids)
        for i, link in enumerate(self.comms.links):
            for key, rid in (("from", link.from_), ("to", link.to)):
                if rid not in names:
                    errors.append((("comms", "links", i, key), f"unknown robot {rid!r}"))
        bad_defaults = False
        for kind in SensorKind:
            try:
                _sensor(kind, getattr(self.sensors, kind.value), None)
            except ValueError as exc:
                errors.append((("sensors", kind.value), str(exc)))
                bad_defaults = True
        for i, r in enumerate(self.robots):
            if bad_defaults and r.sensors is None:
                continue
            try:
                robot_sensors(self, r)
            except ValueError as exc:
                errors.append((("robots", i, "sensors"), str(exc)))
        if errors:
            raise _SemanticErrors(errors)
        return self

    # -- derived objects ------------------------------------------------------
    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(**self.planner.model_dump())

    def link_model(self) -> LinkModel:
        overrides = {(l.from_, l.to): LinkOverride(l.drop_prob, l.bandwidth) for l in self.comms.links}
        return LinkModel(self.comms.drop_prob, tuple(self.comms.latency), self.comms.bandwidth,
                         overrides)

    @property
    def effective_plan_period(self) -> int:
        return self.plan_period or max(1, self.planner.horizon // 2)

    def build_world(self) -> GridWorld:
        obstacles = obstacle_grid(self.world)
        w, h = obstacles.shape
        landmarks = generate_landmarks(w, h, self.world.cell_size, obstacles,
                                       self.world.landmarks_per_cell,
                                       shared_stream(self.seed, "world"))
        return GridWorld(w, h, self.world.cell_size, obstacles,
                         tuple((t.id, tuple(t.cell)) for t in self.world.targets),
                         self.seed, landmarks)


class _SemanticErrors(ValueError):
    def __init__(self, errors: list[tuple[tuple, str]]) -> None:
        self.errors = errors
        super().__init__("; ".join(m for _, m in errors))


def obstacle_grid(world: WorldModel) -> np.ndarray:
    rows = None
    if world.obstacles.grid is not None:
        rows = [r for r in world.obstacles.grid.splitlines() if r.strip()]
        if not rows:
            raise ValueError("obstacle grid is empty")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise ValueError("obstacle grid rows have different lengths")
    w = world.width if world.width is not None else (len(rows[0]) if rows else None)
    h = world.height if world.height is not None else (len(rows) if rows else None)
    if w is None or h is None:
        raise ValueError("world needs width and height or an obstacle grid")
    grid = np.zeros((w, h), dtype=bool)
    if rows is not None:
        if (len(rows[0]), len(rows)) != (w, h):
            raise ValueError(f"obstacle grid is {len(rows[0])}x{len(rows)}, world is {w}x{h}")
        for y, row in enumerate(rows):
            for x, ch in enumerate(row):
                grid[x, y] = ch == "#"
    for x0, y0, x1, y1 in world.obstacles.rects:
        if not (0 <= x0 <= x1 < w and 0 <= y0 <= y1 < h):
            raise ValueError(f"rectangle {[x0, y0, x1, y1]} is outside the {w}x{h} world")
        grid[x0:x1 + 1, y0:y1 + 1] = True
    return grid


def _sensor(kind: SensorKind, base: SensorModel, override: SensorModel | None) -> SensorSpec:
    params: dict[str, Any] = {}
    for model in (base, override):
        if model is None:
            continue
        for k, v in model.model_dump(exclude_none=True).items():
            params[k] = v
    if "fov" in params:
        params["fov"] = None if params["fov"] in ("omni", "omnidirectional") else float(params["fov"])
    factory = default_scout_sensor if kind is SensorKind.SCOUT_LONG_RANGE else default_confirm_sensor
    return factory(**params)


def robot_sensors(cfg: ScenarioConfig, robot: RobotModel) -> tuple[SensorSpec, ...]:
    own = robot.sensors
    confirm = _sensor(SensorKind.TASK_CONFIRM, cfg.sensors.task_confirm,
                      own.task_confirm if own else None)
    if robot.class_ is RobotClass.TASK_ONLY:
        if own is not None and "scout_long_range" in own.model_fields_set:
            raise ValueError(f"task_only robot {robot.id} cannot carry a scout sensor")
        return (confirm,)
    scout = _sensor(SensorKind.SCOUT_LONG_RANGE, cfg.sensors.scout_long_range,
                    own.scout_long_range if own else None)
    return (scout, confirm)


# -- loading with line anchors ----------------------------------------------

def _line_index(node: yaml.Node, path: tuple = (), out: dict | None = None) -> dict[tuple, int]:
    """Map every key path in a composed YAML document to its 1-based line."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = (*path, k.value)
            out[key] = k.start_mark.line + 1
            _line_index(v, key, out)
            out[key] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, (*path, i), out)
    return out


def _anchor(lines: dict[tuple, int], loc: tuple) -> int:
    loc = tuple(loc)
    while loc and loc not in lines:
        loc = loc[:-1]
    return lines.get(loc, 1)


def _fmt_loc(loc: tuple) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


_ALIASES = {"class_": "class", "from_": "from"}


def parse_scenario(text: str, source: str = "<scenario>",
                   overrides: dict[str, Any] | None = None) -> ScenarioConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError([f"{source}:{line}: <yaml>: {problem}"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{source}:1: <root>: scenario must be a mapping"])
    lines = _line_index(root) if root is not None else {}
    for key, value in (overrides or {}).items():
        apply_override(data, key, value)
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        messages = []
        for err in exc.errors():
            loc = tuple(_ALIASES.get(p, p) if isinstance(p, str) else p for p in err["loc"])
            inner = err.get("ctx", {}).get("error")
            if isinstance(inner, _SemanticErrors):
                for sub_loc, msg in inner.errors:
                    messages.append(f"{source}:{_anchor(lines, sub_loc)}: {_fmt_loc(sub_loc)}: {msg}")
                continue
            msg = err["msg"]
            messages.append(f"{source}:{_anchor(lines, loc)}: {_fmt_loc(loc)}: {msg}")
        raise ConfigError(messages) from None


def load_scenario(path: str | Path, overrides: dict[str, Any] | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}:0: <file>: {exc.strerror or exc}"]) from None
    return parse_scenario(text, str(path), overrides)


SWEEP_ALIASES = {
    "delta": "planner.delta",
    "horizon": "planner.horizon",
    "mcts_iterations": "planner.mcts_iterations",
    "drop_prob": "comms.drop_prob",
    "failure_rate": "failure_rate",
    "stitch_period": "stitch_period",
}


def apply_override(data: dict, key: str, value: Any) -> None:
    """Set a dotted path (or a sweep alias such as ``delta``) in raw scenario data."""
    path = SWEEP_ALIASES.get(key, key).split(".")
    node = data
    for part in path[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        if not isinstance(nxt, dict):
            raise ConfigError([f"<override>:0: {key}: {part} is not a section"])
        node = nxt
    node[path[-1]] = value
