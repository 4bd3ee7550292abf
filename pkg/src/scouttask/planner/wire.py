"""Binary encoding of team plan distributions exchanged between robots.

Layout (little endian)::

    b"TPD1" u32 stamp u16 n_robots
    per robot: u16 id_len, id bytes (utf-8), u16 H, u16 k, u16 origin_x,
               u16 origin_y, f32 heading,
               k records of H x (u16 x, u16 y) then f32 probability
"""
from __future__ import annotations

import struct

import numpy as np

from scouttask.planner.types import PlannerError, TeamPlanDistribution, TrajectoryPlan

MAGIC = b"TPD1"


def encode_distribution(dist: TeamPlanDistribution) -> bytes:
    out = [MAGIC, struct.pack("<IH", dist.stamp, len(dist.plans))]
    for rid in sorted(dist.plans):
        entries = dist.plans[rid]
        first = entries[0][0]
        H = first.horizon
        origin = first.start
        rid_b = rid.encode()
        out.append(struct.pack("<H", len(rid_b)) + rid_b)
        out.append(struct.pack("<HHHHf", H, len(entries), origin[0], origin[1], first.heading))
        for plan, prob in entries:
            if plan.horizon != H or plan.start != origin:
                raise PlannerError(f"plans of {rid} must share origin and horizon")
            cells = np.array(plan.waypoints, dtype="<u2").ravel()
            out.append(cells.tobytes() + struct.pack("<f", prob))
    return b"".join(out)


def decode_distribution(data: bytes) -> TeamPlanDistribution:
    if data[:4] != MAGIC:
        raise PlannerError("not a plan distribution payload")
    stamp, n = struct.unpack_from("<IH", data, 4)
    off = 10
    plans = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        rid = data[off:off + ln].decode()
        off += ln
        H, k, ox, oy, heading = struct.unpack_from("<HHHHf", data, off)
        off += 12
        entries = []
        for _ in range(k):
            cells = np.frombuffer(data, dtype="<u2", count=2 * H, offset=off).reshape(H, 2)
            off += 4 * H
            (prob,) = struct.unpack_from("<f", data, off)
            off += 4
            wps = tuple((int(x), int(y)) for x, y in cells)
            entries.append((TrajectoryPlan(rid, wps, True, (ox, oy), float(heading)), float(prob)))
        total = sum(p for _, p in entries)
        plans[rid] = [(pl, p / total) for pl, p in entries]
    return TeamPlanDistribution(plans, stamp)
