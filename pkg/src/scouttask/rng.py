"""Deterministic random streams.

Every robot/subsystem pair gets its own generator, derived from the root seed
by a counter-based spawn key, so adding a robot leaves the other streams
untouched.
"""
from __future__ import annotations

import numpy as np

SUBSYSTEMS = ("sense", "confirm", "plan", "odometry", "scan", "comms", "world")


def stream(seed: int, robot_index: int, subsystem: str) -> np.random.Generator:
    if subsystem not in SUBSYSTEMS:
        raise ValueError(f"unknown subsystem {subsystem!r}")
    ss = np.random.SeedSequence(seed, spawn_key=(robot_index, SUBSYSTEMS.index(subsystem)))
    return np.random.Generator(np.random.Philox(ss))


def shared_stream(seed: int, subsystem: str) -> np.random.Generator:
    """Stream not owned by any robot (bus faults, world generation)."""
    return stream(seed, 0xFFFF, subsystem)
