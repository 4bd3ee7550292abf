"""Plain-text g2o SE2 format.

Owners and edge kinds are not part of the g2o grammar; they are written as
``#``-prefixed comment lines that other tools ignore.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from scouttask.posegraph.graph import NODE_STRIDE, EdgeKind, PoseGraph
from scouttask.posegraph.se2 import Pose2

_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def write_g2o(graph: PoseGraph) -> str:
    lines = []
    for n in sorted(graph.nodes):
        node = graph.nodes[n]
        p = node.estimate
        lines.append(f"VERTEX_SE2 {n} {p.x!r} {p.y!r} {p.theta!r}")
        lines.append(f"# OWNER {n} {node.owner}")
    for e in graph.edges:
        r = e.relative
        info = " ".join(repr(float(e.information[i, j])) for i, j in _UPPER)
        lines.append(f"EDGE_SE2 {e.source} {e.target} {r.x!r} {r.y!r} {r.theta!r} {info}")
        lines.append(f"# KIND {e.source} {e.target} {e.kind.value}")
    if graph.anchor is not None:
        lines.append(f"FIX {graph.anchor}")
    return "\n".join(lines) + "\n"


def read_g2o(text: str) -> PoseGraph:
    vertices: dict[int, Pose2] = {}
    owners: dict[int, str] = {}
    kinds: dict[tuple[int, int], str] = {}
    edges = []
    anchor = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "VERTEX_SE2":
                vertices[int(parts[1])] = Pose2(*map(float, parts[2:5]))
            elif tag == "EDGE_SE2":
                i, j = int(parts[1]), int(parts[2])
                rel = Pose2(*map(float, parts[3:6]))
                vals = list(map(float, parts[6:12]))
                if len(vals) != 6:
                    raise ValueError("expected 6 information entries")
                info = np.zeros((3, 3))
                for (r, c), v in zip(_UPPER, vals):
                    info[r, c] = info[c, r] = v
                edges.append((i, j, rel, info))
            elif tag == "FIX":
                anchor = int(parts[1])
            elif tag == "#" and len(parts) >= 4 and parts[1] == "OWNER":
                owners[int(parts[2])] = parts[3]
            elif tag == "#" and len(parts) >= 5 and parts[1] == "KIND":
                kinds[(int(parts[2]), int(parts[3]))] = parts[4]
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: malformed {tag} record ({exc})") from exc
    graph = PoseGraph(anchor)
    for n in sorted(vertices):
        graph.add_node(n, owners.get(n, str(n // NODE_STRIDE)), vertices[n])
    if anchor is None and vertices:
        graph.anchor = min(vertices)
    for i, j, rel, info in edges:
        kind = kinds.get((i, j))
        if kind is None:
            same_owner = graph.nodes[i].owner == graph.nodes[j].owner
            kind = "odometry" if same_owner and j == i + 1 else (
                "intra_loop" if same_owner else "inter_loop")
        graph.add_edge(i, j, rel, info, EdgeKind(kind))
    return graph


def save_g2o(graph: PoseGraph, path: str | Path) -> None:
    Path(path).write_text(write_g2o(graph))


def load_g2o(path: str | Path) -> PoseGraph:
    return read_g2o(Path(path).read_text())
