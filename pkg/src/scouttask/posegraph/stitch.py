"""Inter-robot map stitching: loop closures between two robots' pose graphs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scouttask.posegraph.graph import EdgeKind, PoseGraph, PoseGraphError
from scouttask.posegraph.registration import RelativePoseEstimate, estimate_relative_pose
from scouttask.posegraph.scan import CompressedScan, similarity_score
from scouttask.posegraph.se2 import Pose2
from scouttask.posegraph.solver import PoseGraphSolution, solve_pose_graph

DEFAULT_S_STAR = 0.75


def add_loop_closure(gi: PoseGraph, gj: PoseGraph, pk: int, pj: int, t: Pose2,
                     cov) -> PoseGraph:
    """Union of both graphs plus an inter-robot edge ``pk -> pj`` measuring ``t``."""
    if pk not in gi:
        raise PoseGraphError(f"node {pk} is not in the first graph")
    if pj not in gj:
        raise PoseGraphError(f"node {pj} is not in the second graph")
    cov = np.asarray(cov, dtype=float)
    info = np.linalg.inv(cov)
    info = 0.5 * (info + info.T)
    merged = gi.union(gj)
    merged.add_edge(pk, pj, t, info, EdgeKind.INTER_LOOP)
    return merged


@dataclass
class Closure:
    own_node: int
    other_node: int
    estimate: RelativePoseEstimate
    score: float


@dataclass
class StitchResult:
    graph: PoseGraph
    solution: PoseGraphSolution
    closures: list[Closure] = field(default_factory=list)


def _express_in_frame(gj: PoseGraph, gi_pose_pk: Pose2, t: Pose2, pj: int,
                      skip: set[int]) -> PoseGraph:
    """Initial guess for gj's nodes in gi's frame, chained through one closure."""
    offset = gi_pose_pk.compose(t).compose(gj.nodes[pj].estimate.inverse())
    moved = gj.copy()
    for n, node in moved.nodes.items():
        if n not in skip:
            node.estimate = offset.compose(node.estimate)
    return moved


def stitch_map(gi: PoseGraph, gj: PoseGraph, zj: CompressedScan,
               own_scans: list[CompressedScan], s_star: float = DEFAULT_S_STAR, *,
               attempted: set | None = None,
               rng: np.random.Generator | None = None,
               **registration) -> StitchResult | None:
    """Compare an incoming scan against every own scan; add closures; solve once.

    ``attempted`` (optional) caches scan pairs already tried; they are skipped.
    Returns None (and leaves both graphs untouched) when no closure is found.
    """
    if zj.node_id not in gj:
        raise PoseGraphError(f"scan node {zj.node_id} is not in the sender's graph")
    merged: PoseGraph | None = None
    closures: list[Closure] = []
    gj_local = gj
    for zk in own_scans:
        if zk.node_id not in gi:
            continue
        if attempted is not None:
            pair = (zj.key, zk.key)
            if pair in attempted:
                continue
            attempted.add(pair)
        s = similarity_score(zj, zk)
        if not s > s_star:
            continue
        est = estimate_relative_pose(zj, zk, rng=rng, **registration)
        if est is None:
            continue
        if merged is None:
            gj_local = _express_in_frame(gj, gi.nodes[zk.node_id].estimate, est.transform,
                                         zj.node_id, skip=set(gi.nodes))
            merged = gi
        merged = add_loop_closure(merged, gj_local, zk.node_id, zj.node_id,
                                  est.transform, est.covariance)
        closures.append(Closure(zk.node_id, zj.node_id, est, s))
    if merged is None:
        return None
    solution = solve_pose_graph(merged)
    return StitchResult(merged.with_estimates(solution.poses), solution, closures)
