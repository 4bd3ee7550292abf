"""Simulated broadcast bus: unicast fan-out with per-link loss, latency and bandwidth."""
from __future__ import annotations

import enum
import heapq
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np


class CommsError(ValueError):
    pass


class Topic(str, enum.Enum):
    DETECTIONS = "detections"
    SCAN = "scan"
    POSE_GRAPH = "pose_graph"
    PLAN_DIST = "plan_dist"
    CONFIRM = "confirm"


@dataclass(frozen=True)
class Envelope:
    msg_id: tuple[str, int]
    sender: str
    topic: Topic
    payload: bytes
    sent_tick: int

    @property
    def size(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class LinkOverride:
    drop_prob: float | None = None
    bandwidth: float | None = None


@dataclass
class LinkModel:
    drop_prob: float = 0.0
    latency: tuple[int, int] = (0, 0)
    bandwidth: float = math.inf
    overrides: dict[tuple[str, str], LinkOverride] = field(default_factory=dict)

    def __post_init__(self) -> None:
        lo, hi = self.latency
        self.latency = (int(lo), int(hi))
        if not 0 <= self.drop_prob <= 1:
            raise CommsError("drop_prob must be in [0, 1]")
        if lo < 0 or hi < lo:
            raise CommsError("latency must satisfy 0 <= min <= max")
        if not self.bandwidth > 0:
            raise CommsError("bandwidth must be > 0")
        for link, o in self.overrides.items():
            if o.drop_prob is not None and not 0 <= o.drop_prob <= 1:
                raise CommsError(f"drop_prob for link {link} must be in [0, 1]")
            if o.bandwidth is not None and not o.bandwidth > 0:
                raise CommsError(f"bandwidth for link {link} must be > 0")

    def link_drop(self, sender: str, receiver: str) -> float:
        o = self.overrides.get((sender, receiver))
        return self.drop_prob if o is None or o.drop_prob is None else o.drop_prob

    def link_bandwidth(self, sender: str, receiver: str) -> float:
        o = self.overrides.get((sender, receiver))
        return self.bandwidth if o is None or o.bandwidth is None else o.bandwidth

    @property
    def lossless(self) -> bool:
        return (self.drop_prob == 0 and self.latency == (0, 0) and math.isinf(self.bandwidth)
                and not self.overrides)


@dataclass
class BusStats:
    sent: int = 0
    copies: int = 0
    delivered: int = 0
    dropped: int = 0
    bytes_sent: int = 0
    by_topic: dict[str, int] = field(default_factory=dict)


class MessageBus:
    """Owned by the engine; agents only interact through broadcast/deliver."""

    def __init__(self, link: LinkModel | None = None,
                 rng: np.random.Generator | Callable[[str], np.random.Generator] | None = None,
                 trace: list | None = None) -> None:
        self.link = link or LinkModel()
        if rng is None:
            rng = np.random.default_rng(0)
        self._rng_for = rng if callable(rng) and not isinstance(rng, np.random.Generator) else (
            lambda _sender, _g=rng: _g)
        self.robots: list[str] = []
        self._seq: dict[str, int] = {}
        self._flight: list[tuple[int, str, int, str, Envelope]] = []
        self._link_free: dict[tuple[str, str], int] = {}
        self._last_delivery: dict[tuple[str, str], int] = {}
        self._delivered: set[tuple[tuple[str, int], str]] = set()
        self.stats = BusStats()
        self.trace = trace

    def register(self, robot_id: str) -> None:
        if robot_id in self._seq:
            raise CommsError(f"robot {robot_id} already registered")
        self.robots.append(robot_id)
        self._seq[robot_id] = 0

    def envelope(self, sender: str, topic: Topic, payload: bytes, tick: int) -> Envelope:
        """Build an envelope with the sender's next message id."""
        if sender not in self._seq:
            raise CommsError(f"unregistered sender {sender}")
        seq = self._seq[sender]
        self._seq[sender] = seq + 1
        return Envelope((sender, seq), sender, Topic(topic), bytes(payload), int(tick))

    def broadcast(self, env: Envelope) -> None:
        sender = env.sender
        if sender not in self._seq:
            raise CommsError(f"unregistered sender {sender}")
        rng = self._rng_for(sender)
        lo, hi = self.link.latency
        receivers, dropped = [], []
        for receiver in self.robots:
            if receiver == sender:
                continue
            # always draw both numbers so fault settings never shift the stream
            u = rng.random()
            lat = int(rng.integers(lo, hi + 1))
            self.stats.copies += 1
            if u < self.link.link_drop(sender, receiver):
                dropped.append(receiver)
                self.stats.dropped += 1
                continue
            link = (sender, receiver)
            bw = self.link.link_bandwidth(sender, receiver)
            if math.isinf(bw):
                due = env.sent_tick + lat
            else:
                occupancy = max(1, math.ceil(env.size / bw))
                start = max(env.sent_tick, self._link_free.get(link, env.sent_tick))
                self._link_free[link] = start + occupancy
                due = start + occupancy - 1 + lat
            due = max(due, self._last_delivery.get(link, due))
            self._last_delivery[link] = due
            heapq.heappush(self._flight, (due, sender, env.msg_id[1], receiver, env))
            receivers.append(receiver)
        self.stats.sent += 1
        self.stats.bytes_sent += env.size
        self.stats.by_topic[env.topic.value] = self.stats.by_topic.get(env.topic.value, 0) + 1
        if self.trace is not None:
            self.trace.append({
                "tick": env.sent_tick, "sender": sender, "topic": env.topic.value,
                "size": env.size, "receivers": receivers, "dropped": dropped,
            })

    def deliver(self, tick: int) -> dict[str, list[Envelope]]:
        """Pop every copy due at or before ``tick``, ordered by (due tick, sender, seq)."""
        out: dict[str, list[Envelope]] = {}
        while self._flight and self._flight[0][0] <= tick:
            _, _, _, receiver, env = heapq.heappop(self._flight)
            key = (env.msg_id, receiver)
            if key in self._delivered:
                continue
            self._delivered.add(key)
            out.setdefault(receiver, []).append(env)
            self.stats.delivered += 1
        return out

    @property
    def in_flight(self) -> int:
        return len(self._flight)


def broadcast(bus: MessageBus, env: Envelope) -> None:
    bus.broadcast(env)


def deliver(bus: MessageBus, tick: int) -> dict[str, list[Envelope]]:
    return bus.deliver(tick)
