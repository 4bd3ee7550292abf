from scouttask.posegraph.g2o import load_g2o, read_g2o, save_g2o, write_g2o
from scouttask.posegraph.graph import (
    NODE_STRIDE,
    Edge,
    EdgeKind,
    PoseGraph,
    PoseGraphError,
)
from scouttask.posegraph.registration import RelativePoseEstimate, estimate_relative_pose
from scouttask.posegraph.scan import CompressedScan, make_scan, similarity_score
from scouttask.posegraph.se2 import Pose2, wrap_angle
from scouttask.posegraph.solver import (
    DisconnectedGraphError,
    PoseGraphSolution,
    objective,
    solve_pose_graph,
)
from scouttask.posegraph.stitch import StitchResult, add_loop_closure, stitch_map

__all__ = [
    "NODE_STRIDE", "CompressedScan", "DisconnectedGraphError", "Edge", "EdgeKind", "Pose2",
    "PoseGraph", "PoseGraphError", "PoseGraphSolution", "RelativePoseEstimate", "StitchResult",
    "add_loop_closure", "estimate_relative_pose", "load_g2o", "make_scan", "objective",
    "read_g2o", "save_g2o", "similarity_score", "solve_pose_graph", "stitch_map", "wrap_angle",
    "write_g2o",
]
