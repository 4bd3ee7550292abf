"""Deterministic tick loop: sense, fuse, stitch, plan, move."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scouttask.belief import DetectionBatch, OccupancyBelief
from scouttask.comms.bus import Envelope, MessageBus, Topic
from scouttask.comms.codec import (
    decode_confirmations,
    decode_detections,
    decode_pose_graph,
    decode_scan,
    encode_confirmations,
    encode_detections,
    encode_pose_graph,
    encode_scan,
)
from scouttask.engine.config import ScenarioConfig, robot_sensors
from scouttask.engine.metrics import SUMMARY_FORMAT, MetricsRecord, dump_json, events_jsonl, metrics_csv
from scouttask.planner.mcts import MCTSTree, PlanEvaluator, decmcts_round
from scouttask.planner.types import PlannerConfig, TeamPlanDistribution, TrajectoryPlan, move_heading
from scouttask.planner.wire import decode_distribution, encode_distribution
from scouttask.posegraph import (
    NODE_STRIDE,
    CompressedScan,
    Pose2,
    PoseGraph,
    make_scan,
    save_g2o,
    similarity_score,
    stitch_map,
)
from scouttask.rng import stream
from scouttask.world import (
    Cell,
    GridWorld,
    RobotClass,
    RobotState,
    SensorKind,
    SensorSpec,
    confirm_targets_detail,
    default_scout_sensor,
    observed_obstacles,
    sample_detection_batch,
    visible_mask,
)

LOCAL_RADIUS = 2  # cells of ground-truth obstacle observation around a robot

_NEIGHBOURS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy]


class SimulationError(RuntimeError):
    pass


def local_avoid(cell: Cell, local_obstacles: np.ndarray, waypoint: Cell) -> Cell:
    """Executed move towards ``waypoint`` given a ground-truth local obstacle mask.

    The waypoint is taken if it is free; otherwise the free neighbour closest
    to it (ties broken by neighbour order); otherwise the robot stays.
    """
    w, h = local_obstacles.shape
    if max(abs(waypoint[0] - cell[0]), abs(waypoint[1] - cell[1])) > 1:
        raise SimulationError(f"waypoint {waypoint} is not adjacent to {cell}")
    if waypoint == cell:
        return cell

    def free(c: Cell) -> bool:
        return 0 <= c[0] < w and 0 <= c[1] < h and not local_obstacles[c]

    if free(waypoint):
        return waypoint
    best, best_d = cell, math.inf
    for dx, dy in _NEIGHBOURS:
        c = (cell[0] + dx, cell[1] + dy)
        if not free(c):
            continue
        d = math.hypot(c[0] - waypoint[0], c[1] - waypoint[1])
        if d < best_d - 1e-12:
            best, best_d = c, d
    return best


def local_observation(world: GridWorld, cell: Cell, radius: int = LOCAL_RADIUS) -> np.ndarray:
    mask = np.zeros((world.width, world.height), dtype=bool)
    x0, x1 = max(0, cell[0] - radius), min(world.width, cell[0] + radius + 1)
    y0, y1 = max(0, cell[1] - radius), min(world.height, cell[1] + radius + 1)
    mask[x0:x1, y0:y1] = world.obstacles[x0:x1, y0:y1]
    return mask


@dataclass
class Agent:
    index: int
    robot_id: str
    robot_class: RobotClass
    sensors: tuple[SensorSpec, ...]
    pose: Pose2
    start: Pose2
    belief: OccupancyBelief
    known: np.ndarray
    map_world: GridWorld
    rngs: dict[str, np.random.Generator]
    graph: PoseGraph
    estimate: Pose2
    odom_info: np.ndarray
    det_seq: int = 0
    recent: list[DetectionBatch] = field(default_factory=list)
    scans: list[CompressedScan] = field(default_factory=list)
    attempted: set = field(default_factory=set)
    mate_graphs: dict[str, tuple[Envelope, PoseGraph | None]] = field(default_factory=dict)
    pending_scans: list[CompressedScan] = field(default_factory=list)
    frame_offsets: dict[str, Pose2] = field(default_factory=dict)
    team: TeamPlanDistribution = field(default_factory=TeamPlanDistribution)
    mate_poses: dict[str, Pose2] = field(default_factory=dict)
    own_dist: list[tuple[TrajectoryPlan, float]] | None = None
    tree: MCTSTree | None = None
    plan: list[Cell] = field(default_factory=list)
    last_mi_ucb: float = 0.0
    known_confirmed: set[str] = field(default_factory=set)

    @property
    def cell(self) -> Cell:
        return self.map_world.cell_of(self.pose)

    def node_id(self, tick: int) -> int:
        return self.index * NODE_STRIDE + tick

    def state(self, pose: Pose2 | None = None) -> RobotState:
        return RobotState(self.robot_id, self.robot_class, pose or self.pose, self.sensors)

    def learn_obstacles(self, mask: np.ndarray) -> None:
        new = mask & ~self.known
        if new.any():
            self.known |= mask
            self.map_world = self.map_world.with_obstacles(self.known.copy())

    def pose_error(self) -> float:
        truth = self.start.between(self.pose)
        return float(math.hypot(truth.x - self.estimate.x, truth.y - self.estimate.y))


class Simulation:
    """Owns the ground-truth world, the agents and the message bus."""

    def __init__(self, config: ScenarioConfig) -> None:
        self.config = config
        self.world = config.build_world()
        self.planner: PlannerConfig = config.planner_config()
        self.tick = 0
        self.records: list[MetricsRecord] = []
        self.events: list[dict] = []
        self.trace: list[dict] | None = [] if config.comms.trace else None
        seed = config.seed
        ids = [r.id for r in config.robots]
        self.index = {rid: i for i, rid in enumerate(ids)}
        self.order = sorted(ids)
        self.bus = MessageBus(config.link_model(),
                              lambda sender: self.agents[sender].rngs["comms"], self.trace)
        self.agents: dict[str, Agent] = {}
        sigma = np.array(config.odometry.sigma, dtype=float)
        info = np.diag(1.0 / sigma**2)
        blank = np.zeros((self.world.width, self.world.height), dtype=bool)
        for i, r in enumerate(config.robots):
            cell = tuple(r.start)
            pose = self.world.pose_at(cell, r.heading)
            graph = PoseGraph()
            graph.add_node(i * NODE_STRIDE, r.id, Pose2.identity())
            map_world = GridWorld(self.world.width, self.world.height, self.world.cell_size,
                                  blank.copy(), (), self.world.rng_seed)
            agent = Agent(
                index=i, robot_id=r.id, robot_class=r.class_, sensors=robot_sensors(config, r),
                pose=pose, start=pose,
                belief=OccupancyBelief(self.world.width, self.world.height, config.belief.prior),
                known=blank.copy(), map_world=map_world,
                rngs={s: stream(seed, i, s) for s in ("sense", "confirm", "plan", "odometry",
                                                       "scan", "comms")},
                graph=graph, estimate=Pose2.identity(), odom_info=info,
            )
            self.agents[r.id] = agent
        for rid in ids:
            self.bus.register(rid)
        for a in self.agents.values():
            for rid, b in self.agents.items():
                if rid != a.robot_id:
                    a.mate_poses[rid] = b.start
            self._observe_obstacles(a)
        # per-target bookkeeping for the summary
        self.first_confirm: dict[str, tuple[int, str]] = {}
        self.confirmers: dict[str, set[str]] = {t: set() for t, _ in self.world.targets}
        self.missed: dict[str, list[tuple[int, str]]] = {t: [] for t, _ in self.world.targets}
        self.stitches: list[dict] = []
        self._lidar = default_scout_sensor(max_range=config.mapping.scan_range, range_decay=0.0)

    # -- helpers ------------------------------------------------------------
    @property
    def all_confirmed(self) -> bool:
        return len(self.first_confirm) == len(self.world.targets)

    def _event(self, kind: str, **data) -> None:
        self.events.append({"tick": self.tick, "event": kind, **data})

    def _observe_obstacles(self, a: Agent) -> None:
        reach = max(s.max_range for s in a.sensors)
        mask = observed_obstacles(self.world, a.pose, reach)
        mask |= local_observation(self.world, a.cell)
        a.learn_obstacles(mask)

    def _send(self, a: Agent, topic: Topic, payload: bytes) -> None:
        self.bus.broadcast(self.bus.envelope(a.robot_id, topic, payload, self.tick))

    def _team_view(self, a: Agent) -> dict[str, RobotState]:
        out = {}
        for rid in self.order:
            b = self.agents[rid]
            pose = a.pose if rid == a.robot_id else a.mate_poses[rid]
            out[rid] = b.state(pose)
        return out

    # -- phases -------------------------------------------------------------
    def _sense(self, a: Agent) -> tuple[list[DetectionBatch], list[str], list[str]]:
        state = a.state()
        batches = []
        for sensor in a.sensors:
            batch = sample_detection_batch(self.world, state, sensor, self.tick,
                                           a.rngs["sense"], a.det_seq)
            a.det_seq += len(batch)
            batches.append(batch)
        confirmed, missed = confirm_targets_detail(self.world, state, self.tick,
                                                   self.config.failure_rate, a.rngs["confirm"])
        self._observe_obstacles(a)
        return batches, confirmed, missed

    def _apply_confirmation(self, a: Agent, tid: str, cell: Cell) -> None:
        a.belief.mark_confirmed(cell)
        a.known_confirmed.add(tid)

    def _own_update(self, a: Agent, batches, confirmed, missed) -> None:
        for batch in batches:
            a.belief.fuse_batch(batch)
            a.recent.append(batch)
            if len(batch):
                self._send(a, Topic.DETECTIONS, encode_detections(batch))
        self._trim_recent(a)
        cells = dict(self.world.targets)
        fresh = []
        for tid in missed:
            if tid not in self.first_confirm:
                self.missed[tid].append((self.tick, a.robot_id))
            self._event("confirm_missed", robot=a.robot_id, target=tid)
        for tid in confirmed:
            first = tid not in self.first_confirm
            revalidated = first and bool(self.missed[tid])
            if first:
                self.first_confirm[tid] = (self.tick, a.robot_id)
            self.confirmers[tid].add(a.robot_id)
            if tid not in a.known_confirmed:
                fresh.append((tid, cells[tid]))
            self._apply_confirmation(a, tid, cells[tid])
            self._event("confirmed", robot=a.robot_id, target=tid, first=first,
                        revalidated=revalidated)
        if fresh:
            self._send(a, Topic.CONFIRM, encode_confirmations(a.robot_id, self.tick, fresh))
        cfg = self.config
        if cfg.digest_period and cfg.digest_size and self.tick % cfg.digest_period == cfg.digest_period - 1:
            digest = self._digest(a)
            if digest is not None:
                self._send(a, Topic.DETECTIONS, encode_detections(digest))
        if self.tick % cfg.stitch_period == 0:
            scan = self._take_scan(a)
            self._send(a, Topic.POSE_GRAPH, encode_pose_graph(a.graph))
            self._send(a, Topic.SCAN, encode_scan(scan))
        if a.own_dist is not None and self.tick % self.planner.exchange_period == 0:
            dist = TeamPlanDistribution({a.robot_id: a.own_dist}, self.tick)
            self._send(a, Topic.PLAN_DIST, encode_distribution(dist))

    def _trim_recent(self, a: Agent) -> None:
        keep, total = [], 0
        for batch in reversed(a.recent):
            keep.append(batch)
            total += len(batch)
            if total >= self.config.digest_size:
                break
        a.recent = keep[::-1]

    def _digest(self, a: Agent) -> DetectionBatch | None:
        """Last ``digest_size`` own detections as one batch."""
        if not a.recent:
            return None
        cols = {k: np.concatenate([getattr(b, k) for b in a.recent])
                for k in ("seq", "xs", "ys", "positive", "p_detect", "p_false")}
        n = self.config.digest_size
        cols = {k: v[-n:] for k, v in cols.items()}
        return DetectionBatch(a.robot_id, sensor_kind="digest", tick=self.tick, **cols)

    def _take_scan(self, a: Agent) -> CompressedScan:
        lm = self.world.landmarks
        pts = np.zeros((0, 2))
        if lm.shape[0]:
            d = np.hypot(lm[:, 0] - a.pose.x, lm[:, 1] - a.pose.y)
            near = d <= self.config.mapping.scan_range
            cand = lm[near]
            if cand.shape[0]:
                mask = visible_mask(self.world, a.pose, self._lidar)
                cs = self.world.cell_size
                cx = np.clip((cand[:, 0] // cs).astype(int), 0, self.world.width - 1)
                cy = np.clip((cand[:, 1] // cs).astype(int), 0, self.world.height - 1)
                pts = cand[mask[cx, cy]]
        local = a.pose.inverse().transform_points(pts)
        noise = self.config.mapping.landmark_noise
        draws = a.rngs["scan"].normal(0.0, 1.0, size=local.shape)
        local = local + noise * draws
        scan = make_scan(a.robot_id, a.node_id(self.tick), local, scan_id=len(a.scans),
                         tick=self.tick)
        a.scans.append(scan)
        return scan

    def _receive(self, a: Agent, envs: list[Envelope]) -> None:
        cells = dict(self.world.targets)
        for env in envs:
            topic = env.topic
            if topic is Topic.DETECTIONS:
                a.belief.fuse_batch(decode_detections(env.payload))
            elif topic is Topic.CONFIRM:
                _, _, items = decode_confirmations(env.payload)
                for tid, cell in items:
                    if tid in cells:
                        self._apply_confirmation(a, tid, cell)
            elif topic is Topic.POSE_GRAPH:
                a.mate_graphs[env.sender] = (env, None)
            elif topic is Topic.SCAN:
                a.pending_scans.append(decode_scan(env.payload))
            elif topic is Topic.PLAN_DIST:
                dist = decode_distribution(env.payload)
                a.team.merge(dist, exclude=a.robot_id)
                for rid, entries in dist.plans.items():
                    if rid != a.robot_id and rid in a.mate_poses:
                        plan = entries[0][0]
                        a.mate_poses[rid] = self.world.pose_at(plan.start, plan.heading)

    def _stitch(self, a: Agent) -> None:
        pending, a.pending_scans = a.pending_scans, []
        s_star = self.config.mapping.s_star
        for scan in pending:
            candidates = [z for z in a.scans if (scan.key, z.key) not in a.attempted]
            if not any(similarity_score(scan, z) > s_star for z in candidates):
                a.attempted.update((scan.key, z.key) for z in candidates)
                continue
            held = a.mate_graphs.get(scan.origin_robot)
            if held is None:
                continue
            env, graph = held
            if graph is None:
                graph = decode_pose_graph(env.payload)
                a.mate_graphs[scan.origin_robot] = (env, graph)
            if scan.node_id not in graph:
                continue
            result = stitch_map(a.graph, graph, scan, a.scans, s_star, attempted=a.attempted,
                                rng=a.rngs["scan"],
                                inlier_threshold=self.config.mapping.inlier_threshold,
                                min_inliers=self.config.mapping.min_inliers)
            if result is None:
                continue
            mate = scan.origin_robot
            anchor = self.agents[mate].index * NODE_STRIDE
            offset = result.graph.nodes[anchor].estimate
            a.frame_offsets[mate] = offset
            truth = a.start.between(self.agents[mate].start)
            err = offset.boxminus(truth)
            rec = {
                "robot": a.robot_id, "teammate": mate, "tick": self.tick,
                "closures": len(result.closures),
                "iterations": result.solution.iterations,
                "offset_error_m": float(math.hypot(err[0], err[1])),
                "offset_error_rad": float(abs(err[2])),
            }
            self.stitches.append(rec)
            self._event("stitched", **{k: v for k, v in rec.items() if k != "tick"})

    def _plan(self, a: Agent) -> None:
        robots = self._team_view(a)
        evaluator = PlanEvaluator(a.belief, robots, a.map_world, self.planner)
        received = a.team if a.team.plans else None
        result = decmcts_round(a.robot_id, a.belief, a.tree, received, self.planner,
                               a.rngs["plan"], robots=robots, world=a.map_world,
                               evaluator=evaluator, stamp=self.tick)
        a.tree = result.tree
        a.own_dist = result.distribution
        a.plan = list(result.best_plan.waypoints)
        team = [result.best_plan]
        for rid in self.order:
            if rid == a.robot_id:
                continue
            if received is not None and rid in received.plans:
                team.append(max(received.plans[rid], key=lambda e: e[1])[0])
            else:
                mp = a.mate_poses[rid]
                team.append(TrajectoryPlan.stay(rid, a.map_world.cell_of(mp),
                                                self.planner.horizon, mp.theta))
        a.last_mi_ucb = evaluator.value(team)

    def _move(self, a: Agent) -> None:
        here = a.cell
        waypoint = a.plan.pop(0) if a.plan else here
        if max(abs(waypoint[0] - here[0]), abs(waypoint[1] - here[1])) > 1:
            # plan went stale after a detour; wait for the next planning round
            a.plan = []
            waypoint = here
        executed = local_avoid(here, local_observation(self.world, here), waypoint)
        if executed != waypoint:
            a.plan = []
        if self.world.obstacles[executed]:
            raise SimulationError(f"robot {a.robot_id} would enter obstacle {executed}")
        heading = move_heading(here, executed, a.pose.theta)
        new_pose = self.world.pose_at(executed, heading)
        true_rel = a.pose.between(new_pose)
        sigma = self.config.odometry.sigma
        n = a.rngs["odometry"].normal(0.0, 1.0, size=3) * np.asarray(sigma)
        measured = Pose2(true_rel.x + n[0], true_rel.y + n[1], true_rel.theta + n[2])
        a.estimate = a.estimate.compose(measured)
        a.pose = new_pose
        prev, nxt = a.node_id(self.tick), a.node_id(self.tick + 1)
        a.graph.add_node(nxt, a.robot_id, a.estimate)
        a.graph.add_edge(prev, nxt, measured, a.odom_info)

    # -- main loop ----------------------------------------------------------
    def step(self) -> MetricsRecord:
        t = self.tick
        agents = [self.agents[rid] for rid in self.order]
        try:
            sensed = {a.robot_id: self._sense(a) for a in agents}
            for a in agents:
                self._own_update(a, *sensed[a.robot_id])
            inbox = self.bus.deliver(t)
            for a in agents:
                self._receive(a, inbox.get(a.robot_id, []))
            for a in agents:
                self._stitch(a)
            period = self.config.effective_plan_period
            for a in agents:
                if t % period == 0 or not a.plan:
                    self._plan(a)
            for a in agents:
                self._move(a)
        except SimulationError:
            raise
        except Exception as exc:
            raise SimulationError(f"tick {t}: {type(exc).__name__}: {exc}") from exc
        stats = self.bus.stats
        rec = MetricsRecord(
            tick=t,
            poses={a.robot_id: (a.pose.x, a.pose.y, a.pose.theta) for a in agents},
            pose_errors={a.robot_id: a.pose_error() for a in agents},
            confirmed=len(self.first_confirm),
            entropy={a.robot_id: a.belief.entropy() for a in agents},
            mi_ucb={a.robot_id: a.last_mi_ucb for a in agents},
            sent=stats.sent, delivered=stats.delivered, dropped=stats.dropped,
            positions={a.robot_id: a.cell for a in agents},
        )
        self.records.append(rec)
        self.tick += 1
        return rec

    def run(self, ticks: int | None = None) -> list[MetricsRecord]:
        budget = self.config.ticks if ticks is None else ticks
        while self.tick < budget and not self.all_confirmed:
            self.step()
        return self.records

    # -- reporting ----------------------------------------------------------
    def summary(self) -> dict:
        w = self.world
        targets = []
        for tid, cell in w.targets:
            first = self.first_confirm.get(tid)
            missed_first = bool(self.missed[tid])
            targets.append({
                "id": tid, "cell": list(cell),
                "confirmed_tick": first[0] if first else None,
                "confirmed_by": first[1] if first else None,
                "confirmers": sorted(self.confirmers[tid]),
                "missed": [{"tick": t, "robot": r} for t, r in self.missed[tid]],
                "revalidated": bool(first) and missed_first,
            })
        st = self.bus.stats
        return {
            "format": SUMMARY_FORMAT,
            "scenario": self.config.name,
            "seed": self.config.seed,
            "ticks_run": self.tick,
            "tick_budget": self.config.ticks,
            "all_confirmed": self.all_confirmed,
            "targets": targets,
            "messages": {"sent": st.sent, "copies": st.copies, "delivered": st.delivered,
                         "dropped": st.dropped, "bytes": st.bytes_sent,
                         "by_topic": dict(sorted(st.by_topic.items()))},
            "localisation": {
                "final_pose_error_m": {rid: self.agents[rid].pose_error() for rid in self.order},
                "stitches": self.stitches,
            },
            "robots": [{"id": r.id, "class": r.class_.value, "start": list(r.start)}
                       for r in self.config.robots],
            "world": {
                "width": w.width, "height": w.height, "cell_size": w.cell_size,
                "obstacles": ["".join("#" if w.obstacles[x, y] else "." for x in range(w.width))
                              for y in range(w.height)],
            },
        }

    def write_outputs(self, out: str | Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics_csv(self.records, self.order))
        (out / "events.jsonl").write_text(events_jsonl(self.events))
        (out / "summary.json").write_text(dump_json(self.summary()))
        graphs = out / "graphs"
        graphs.mkdir(exist_ok=True)
        for rid in self.order:
            save_g2o(self.agents[rid].graph, graphs / f"{rid}.g2o")
        if self.trace is not None:
            (out / "trace.jsonl").write_text(events_jsonl(self.trace))


def step(sim: Simulation) -> MetricsRecord:
    return sim.step()


def run(config: ScenarioConfig, out: str | Path | None = None,
        ticks: int | None = None) -> tuple[list[MetricsRecord], Simulation]:
    """Run to the tick budget or until every target is confirmed."""
    sim = Simulation(config)
    sim.run(ticks)
    if out is not None:
        sim.write_outputs(out)
    return sim.records, sim
