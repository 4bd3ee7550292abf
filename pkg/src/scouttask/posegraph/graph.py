"""Multi-robot pose graph container."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from scouttask.posegraph.se2 import Pose2

# node ids are ints; the owning robot's index is id // NODE_STRIDE in engine-built graphs
NODE_STRIDE = 1_000_000
DEFAULT_ODOMETRY_INFORMATION = np.diag([100.0, 100.0, 400.0])


class PoseGraphError(ValueError):
    pass


class EdgeKind(str, enum.Enum):
    ODOMETRY = "odometry"
    INTRA_LOOP = "intra_loop"
    INTER_LOOP = "inter_loop"


def is_spd(m: np.ndarray) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    if not np.allclose(m, m.T, rtol=1e-9, atol=1e-9 * max(1.0, float(np.abs(m).max()))):
        return False
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True, eq=False)
class Edge:
    source: int
    target: int
    relative: Pose2
    information: np.ndarray
    kind: EdgeKind = EdgeKind.ODOMETRY

    def same_constraint(self, other: Edge) -> bool:
        return (self.source == other.source and self.target == other.target
                and self.kind == other.kind
                and self.relative == other.relative
                and np.array_equal(self.information, other.information))


@dataclass
class Node:
    owner: str
    estimate: Pose2


class PoseGraph:
    def __init__(self, anchor: int | None = None) -> None:
        self.nodes: dict[int, Node] = {}
        self.edges: list[Edge] = []
        self.anchor = anchor
        self._odom_out: dict[int, int] = {}
        self._odom_in: dict[int, int] = {}
        # odometry chain segments, for O(1) cycle checks
        self._tail2head: dict[int, int] = {}
        self._head2tail: dict[int, int] = {}
        self._edge_index: dict[tuple[int, int, EdgeKind], list[Edge]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    def add_node(self, node_id: int, owner: str, estimate: Pose2) -> None:
        node_id = int(node_id)
        if node_id in self.nodes:
            raise PoseGraphError(f"node {node_id} already exists")
        self.nodes[node_id] = Node(str(owner), estimate)
        if self.anchor is None:
            self.anchor = node_id

    def add_edge(self, source: int, target: int, relative: Pose2, information=None,
                 kind: EdgeKind = EdgeKind.ODOMETRY) -> Edge:
        kind = EdgeKind(kind)
        for n in (source, target):
            if n not in self.nodes:
                raise PoseGraphError(f"edge endpoint {n} is not in the graph")
        info = DEFAULT_ODOMETRY_INFORMATION if information is None else information
        info = np.array(info, dtype=float)
        if not is_spd(info):
            raise PoseGraphError(f"information of edge {source}->{target} is not SPD")
        info = 0.5 * (info + info.T)
        info.setflags(write=False)
        edge = Edge(int(source), int(target), relative, info, kind)
        existing = self._find(edge)
        if existing is not None:
            return existing
        if kind is EdgeKind.ODOMETRY:
            self._check_chain(edge)
            self._link_chain(edge)
        self._append(edge)
        return edge

    def _find(self, edge: Edge) -> Edge | None:
        for e in self._edge_index.get((edge.source, edge.target, edge.kind), ()):
            if e.same_constraint(edge):
                return e
        return None

    def _append(self, edge: Edge) -> None:
        self.edges.append(edge)
        self._edge_index.setdefault((edge.source, edge.target, edge.kind), []).append(edge)

    def _link_chain(self, edge: Edge) -> None:
        s, t = edge.source, edge.target
        self._odom_out[s] = t
        self._odom_in[t] = s
        head = self._tail2head.pop(s, s)
        tail = self._head2tail.pop(t, t)
        self._head2tail.pop(head, None)
        self._tail2head.pop(tail, None)
        self._head2tail[head] = tail
        self._tail2head[tail] = head

    def _check_chain(self, edge: Edge) -> None:
        s, t = edge.source, edge.target
        if self.nodes[s].owner != self.nodes[t].owner:
            raise PoseGraphError("odometry edges must join nodes of one robot")
        if self._odom_out.get(s) == t:
            return
        if s == t or s in self._odom_out or t in self._odom_in:
            raise PoseGraphError(f"odometry edge {s}->{t} breaks the per-robot chain")
        if self._tail2head.get(s, s) == t:
            raise PoseGraphError(f"odometry edge {s}->{t} closes a cycle")

    def owners(self) -> list[str]:
        return sorted({n.owner for n in self.nodes.values()})

    def nodes_of(self, owner: str) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.owner == owner)

    def estimates(self) -> dict[int, Pose2]:
        return {i: n.estimate for i, n in self.nodes.items()}

    def copy(self) -> PoseGraph:
        g = PoseGraph(self.anchor)
        g.nodes = {i: Node(n.owner, n.estimate) for i, n in self.nodes.items()}
        g.edges = list(self.edges)
        g._odom_out = dict(self._odom_out)
        g._odom_in = dict(self._odom_in)
        g._tail2head = dict(self._tail2head)
        g._head2tail = dict(self._head2tail)
        g._edge_index = {k: list(v) for k, v in self._edge_index.items()}
        return g

    def with_estimates(self, poses: dict[int, Pose2]) -> PoseGraph:
        g = self.copy()
        for i, p in poses.items():
            g.nodes[i].estimate = p
        return g

    def union(self, other: PoseGraph) -> PoseGraph:
        """Nodes and edges of both graphs; on id clashes this graph's estimate wins."""
        g = self.copy()
        for i, n in other.nodes.items():
            if i not in g.nodes:
                g.nodes[i] = Node(n.owner, n.estimate)
            elif g.nodes[i].owner != n.owner:
                raise PoseGraphError(f"node {i} has conflicting owners")
        for e in other.edges:
            if g._find(e) is not None:
                continue
            if e.kind is EdgeKind.ODOMETRY:
                if g._odom_out.get(e.source) == e.target:
                    continue
                g._check_chain(e)
                g._link_chain(e)
            g._append(e)
        return g

    def components(self) -> list[list[int]]:
        parent = {i: i for i in self.nodes}

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for e in self.edges:
            a, b = find(e.source), find(e.target)
            if a != b:
                parent[max(a, b)] = min(a, b)
        groups: dict[int, list[int]] = {}
        for i in sorted(self.nodes):
            groups.setdefault(find(i), []).append(i)
        return sorted(groups.values(), key=lambda g: g[0])

    def edge_count(self, kind: EdgeKind | None = None) -> int:
        if kind is None:
            return len(self.edges)
        return sum(1 for e in self.edges if e.kind is EdgeKind(kind))
