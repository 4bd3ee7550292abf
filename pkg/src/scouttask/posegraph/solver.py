"""Sparse Gauss-Newton over SE(2) pose graphs with a fixed anchor."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from scouttask.posegraph.graph import PoseGraph, PoseGraphError
from scouttask.posegraph.se2 import Pose2, wrap_angles


class DisconnectedGraphError(PoseGraphError):
    def __init__(self, components: list[list[int]]) -> None:
        self.components = components
        summary = "; ".join(
            f"[{c[0]}..{c[-1]}] ({len(c)} nodes)" if len(c) > 3 else str(c) for c in components
        )
        super().__init__(f"pose graph has {len(components)} components: {summary}")


@dataclass
class PoseGraphSolution:
    poses: dict[int, Pose2]
    converged: bool
    iterations: int
    initial_objective: float
    final_objective: float
    history: list[float] = field(default_factory=list)

    def __getitem__(self, node_id: int) -> Pose2:
        return self.poses[node_id]

    def __len__(self) -> int:
        return len(self.poses)


class _Problem:
    def __init__(self, graph: PoseGraph) -> None:
        self.ids = sorted(graph.nodes)
        index = {n: k for k, n in enumerate(self.ids)}
        self.x0 = np.array([graph.nodes[n].estimate.as_vector() for n in self.ids]).reshape(-1, 3)
        edges = graph.edges
        self.i = np.array([index[e.source] for e in edges], dtype=np.int64)
        self.j = np.array([index[e.target] for e in edges], dtype=np.int64)
        self.z = np.array([e.relative.as_vector() for e in edges]).reshape(-1, 3)
        self.omega = np.array([e.information for e in edges]).reshape(-1, 3, 3)
        self.anchor = index[graph.anchor]
        n = len(self.ids)
        free = np.ones(3 * n, dtype=bool)
        free[3 * self.anchor: 3 * self.anchor + 3] = False
        self.free = free

    def residuals(self, x: np.ndarray) -> np.ndarray:
        xi, xj = x[self.i], x[self.j]
        c, s = np.cos(xi[:, 2]), np.sin(xi[:, 2])
        dx = xj[:, 0] - xi[:, 0]
        dy = xj[:, 1] - xi[:, 1]
        a = c * dx + s * dy
        b = -s * dx + c * dy
        cz, sz = np.cos(self.z[:, 2]), np.sin(self.z[:, 2])
        ua, ub = a - self.z[:, 0], b - self.z[:, 1]
        e = np.empty((len(self.i), 3))
        e[:, 0] = cz * ua + sz * ub
        e[:, 1] = -sz * ua + cz * ub
        e[:, 2] = wrap_angles(xj[:, 2] - xi[:, 2] - self.z[:, 2])
        return e

    def objective(self, x: np.ndarray) -> float:
        e = self.residuals(x)
        return float(np.einsum("ki,kij,kj->", e, self.omega, e))

    def linearise(self, x: np.ndarray):
        m = len(self.i)
        xi, xj = x[self.i], x[self.j]
        c, s = np.cos(xi[:, 2]), np.sin(xi[:, 2])
        dx = xj[:, 0] - xi[:, 0]
        dy = xj[:, 1] - xi[:, 1]
        a = c * dx + s * dy
        b = -s * dx + c * dy
        cz, sz = np.cos(self.z[:, 2]), np.sin(self.z[:, 2])
        # R_z^T R_i^T
        rt = np.empty((m, 2, 2))
        rt[:, 0, 0] = cz * c - sz * s
        rt[:, 0, 1] = cz * s + sz * c
        rt[:, 1, 0] = -sz * c - cz * s
        rt[:, 1, 1] = -sz * s + cz * c
        A = np.zeros((m, 3, 3))
        B = np.zeros((m, 3, 3))
        A[:, :2, :2] = -rt
        A[:, 0, 2] = cz * b - sz * a
        A[:, 1, 2] = -sz * b - cz * a
        A[:, 2, 2] = -1.0
        B[:, :2, :2] = rt
        B[:, 2, 2] = 1.0
        e = self.residuals(x)
        At_O = np.einsum("kji,kjl->kil", A, self.omega)
        Bt_O = np.einsum("kji,kjl->kil", B, self.omega)
        blocks = {
            (0, 0): np.einsum("kij,kjl->kil", At_O, A),
            (0, 1): np.einsum("kij,kjl->kil", At_O, B),
            (1, 0): np.einsum("kij,kjl->kil", Bt_O, A),
            (1, 1): np.einsum("kij,kjl->kil", Bt_O, B),
        }
        ends = (self.i, self.j)
        rows, cols, vals = [], [], []
        r3 = np.arange(3)
        for (p, q), blk in blocks.items():
            rr = 3 * ends[p][:, None, None] + r3[None, :, None]
            cc = 3 * ends[q][:, None, None] + r3[None, None, :]
            rows.append(np.broadcast_to(rr, blk.shape).ravel())
            cols.append(np.broadcast_to(cc, blk.shape).ravel())
            vals.append(blk.ravel())
        size = 3 * len(self.ids)
        H = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size),
        ).tocsr()
        g = np.zeros(size)
        np.add.at(g, (3 * self.i[:, None] + r3).ravel(), np.einsum("kij,kj->ki", At_O, e).ravel())
        np.add.at(g, (3 * self.j[:, None] + r3).ravel(), np.einsum("kij,kj->ki", Bt_O, e).ravel())
        return H, g

    def retract(self, x: np.ndarray, step: np.ndarray) -> np.ndarray:
        out = x + step.reshape(-1, 3)
        out[:, 2] = wrap_angles(out[:, 2])
        return out


def objective(graph: PoseGraph, poses: dict[int, Pose2] | None = None) -> float:
    """Weighted sum of squared edge errors, at ``poses`` or at the stored estimates."""
    if not graph.edges:
        return 0.0
    prob = _Problem(graph if poses is None else graph.with_estimates(poses))
    return prob.objective(prob.x0)


def solve_pose_graph(graph: PoseGraph, max_iterations: int = 100,
                     step_tolerance: float = 1e-9) -> PoseGraphSolution:
    """Gauss-Newton with backtracking; the anchor pose is held at its estimate."""
    if not graph.nodes:
        return PoseGraphSolution({}, True, 0, 0.0, 0.0)
    if graph.anchor is None or graph.anchor not in graph.nodes:
        raise PoseGraphError("pose graph has no anchor")
    comps = graph.components()
    if len(comps) > 1:
        raise DisconnectedGraphError(comps)
    if not graph.edges:
        return PoseGraphSolution(graph.estimates(), True, 0, 0.0, 0.0)

    prob = _Problem(graph)
    x = prob.x0.copy()
    cost = prob.objective(x)
    initial = cost
    history = [cost]
    converged = False
    it = 0
    free = prob.free
    for it in range(1, max_iterations + 1):
        H, g = prob.linearise(x)
        Hf = H[free][:, free]
        step = np.zeros(free.shape[0])
        try:
            step[free] = spla.spsolve(Hf.tocsc(), -g[free])
        except RuntimeError as exc:  # singular factorisation
            raise PoseGraphError(f"normal equations are singular: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise PoseGraphError("normal equations are singular")
        norm = float(np.linalg.norm(step))
        alpha = 1.0
        accepted = False
        for _ in range(30):
            cand = prob.retract(x, alpha * step)
            cand_cost = prob.objective(cand)
            if cand_cost <= cost:
                accepted = True
                break
            alpha *= 0.5
        if accepted:
            x, cost = cand, cand_cost
            history.append(cost)
        if norm * alpha < step_tolerance or norm < step_tolerance:
            converged = True
            break
        if not accepted:
            # no descent along the Gauss-Newton direction: at a numerical minimum
            converged = bool(norm < 1e-6 or cost <= 1e-18)
            break
    poses = {n: Pose2.from_vector(x[k]) for k, n in enumerate(prob.ids)}
    poses[graph.anchor] = graph.nodes[graph.anchor].estimate
    return PoseGraphSolution(poses, converged, it, initial, cost, history)
