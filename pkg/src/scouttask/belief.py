"""Per-robot occupancy-grid filter over target presence.

Evidence is accumulated as fixed-point integers (log-likelihood ratios scaled
by 2**32) so that fusing a detection multiset in any order, on any robot,
produces bit-identical grids. The log-odds clamp is applied on read.
"""
from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EVIDENCE_SCALE = float(2**32)
L_MAX = math.log(1e6)
DEFAULT_PRIOR = 0.01
_BINARY_MAGIC = b"SBEL"


class BeliefError(ValueError):
    pass


class Outcome(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class Detection:
    origin_robot: str
    seq: int
    cell: tuple[int, int]
    outcome: Outcome
    sensor_kind: str
    effective_p_detect: float
    p_false: float
    tick: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcome", Outcome(self.outcome))
        if not 0 <= self.p_false < self.effective_p_detect <= 1:
            raise BeliefError(
                f"detection {self.origin_robot}/{self.seq}: need 0 <= p_false < p_detect <= 1"
            )

    @property
    def id(self) -> tuple[str, int]:
        return (self.origin_robot, self.seq)

    @property
    def positive(self) -> bool:
        return self.outcome is Outcome.POSITIVE


@dataclass
class DetectionBatch:
    """Column-oriented detections from one origin robot (one scan, or a digest)."""

    origin_robot: str
    seq: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    positive: np.ndarray
    p_detect: np.ndarray
    p_false: np.ndarray
    sensor_kind: str = ""
    tick: int = 0

    def __len__(self) -> int:
        return int(self.seq.shape[0])

    @classmethod
    def from_detections(cls, detections: list[Detection]) -> list[DetectionBatch]:
        by_origin: dict[str, list[Detection]] = {}
        for d in detections:
            by_origin.setdefault(d.origin_robot, []).append(d)
        out = []
        for origin, ds in by_origin.items():
            out.append(cls(
                origin_robot=origin,
                seq=np.array([d.seq for d in ds], dtype=np.int64),
                xs=np.array([d.cell[0] for d in ds], dtype=np.int64),
                ys=np.array([d.cell[1] for d in ds], dtype=np.int64),
                positive=np.array([d.positive for d in ds], dtype=bool),
                p_detect=np.array([d.effective_p_detect for d in ds], dtype=float),
                p_false=np.array([d.p_false for d in ds], dtype=float),
                sensor_kind=ds[0].sensor_kind,
                tick=ds[0].tick,
            ))
        return out

    def to_list(self) -> list[Detection]:
        out = []
        for i in range(len(self)):
            out.append(Detection(
                origin_robot=self.origin_robot,
                seq=int(self.seq[i]),
                cell=(int(self.xs[i]), int(self.ys[i])),
                outcome=Outcome.POSITIVE if self.positive[i] else Outcome.NEGATIVE,
                sensor_kind=self.sensor_kind,
                effective_p_detect=float(self.p_detect[i]),
                p_false=float(self.p_false[i]),
                tick=self.tick,
            ))
        return out

    def select(self, index: np.ndarray) -> DetectionBatch:
        return DetectionBatch(
            self.origin_robot, self.seq[index], self.xs[index], self.ys[index],
            self.positive[index], self.p_detect[index], self.p_false[index],
            self.sensor_kind, self.tick,
        )


def log_likelihood_increment(positive, p_detect, p_false) -> np.ndarray:
    """Fixed-point log-likelihood ratio of one binary classifier outcome."""
    positive = np.asarray(positive, dtype=bool)
    p_d = np.asarray(p_detect, dtype=float)
    p_f = np.asarray(p_false, dtype=float)
    with np.errstate(divide="ignore"):
        llr = np.where(positive, np.log(p_d) - np.log(p_f), np.log1p(-p_d) - np.log1p(-p_f))
    # perfect channels give infinite evidence; cap far beyond the read clamp
    cap = 8.0 * L_MAX
    llr = np.clip(llr, -cap, cap)
    return np.rint(llr * EVIDENCE_SCALE).astype(np.int64)


def _logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


class OccupancyBelief:
    def __init__(self, width: int, height: int, prior: float = DEFAULT_PRIOR,
                 l_max: float = L_MAX) -> None:
        if not 0 < prior < 1:
            raise BeliefError("prior must be in (0, 1)")
        self.width = int(width)
        self.height = int(height)
        self.prior = float(prior)
        self.l_max = float(l_max)
        self.evidence = np.zeros((self.width, self.height), dtype=np.int64)
        self.confirmed = np.zeros((self.width, self.height), dtype=bool)
        self._applied: dict[str, np.ndarray] = {}
        self._prior_logit = _logit(self.prior)

    # -- dedup ledger -------------------------------------------------------
    def has_applied(self, origin: str, seq: int) -> bool:
        ledger = self._applied.get(origin)
        return ledger is not None and 0 <= seq < ledger.shape[0] and bool(ledger[seq])

    @property
    def applied(self) -> set[tuple[str, int]]:
        return {(o, int(s)) for o, ledger in self._applied.items() for s in np.flatnonzero(ledger)}

    def _ledger(self, origin: str, max_seq: int) -> np.ndarray:
        ledger = self._applied.get(origin)
        if ledger is None or ledger.shape[0] <= max_seq:
            size = max(1024, 2 * (max_seq + 1))
            grown = np.zeros(size, dtype=bool)
            if ledger is not None:
                grown[: ledger.shape[0]] = ledger
            self._applied[origin] = ledger = grown
        return ledger

    # -- fusion -------------------------------------------------------------
    def fuse_batch(self, batch: DetectionBatch) -> int:
        """Fuse unseen detections of ``batch``; returns the number applied."""
        n = len(batch)
        if n == 0:
            return 0
        if ((batch.xs < 0) | (batch.xs >= self.width) | (batch.ys < 0)
                | (batch.ys >= self.height)).any():
            raise BeliefError(f"detection from {batch.origin_robot} refers to a cell out of bounds")
        if (batch.seq < 0).any():
            raise BeliefError("detection sequence numbers must be non-negative")
        seq, first = np.unique(batch.seq, return_index=True)
        ledger = self._ledger(batch.origin_robot, int(seq[-1]))
        fresh = first[~ledger[seq]]
        if fresh.size == 0:
            return 0
        inc = log_likelihood_increment(
            batch.positive[fresh], batch.p_detect[fresh], batch.p_false[fresh]
        )
        np.add.at(self.evidence, (batch.xs[fresh], batch.ys[fresh]), inc)
        ledger[batch.seq[fresh]] = True
        return int(fresh.size)

    def update(self, detection: Detection) -> OccupancyBelief:
        x, y = detection.cell
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise BeliefError(f"cell {detection.cell} out of bounds")
        for batch in DetectionBatch.from_detections([detection]):
            self.fuse_batch(batch)
        return self

    def mark_confirmed(self, cell: tuple[int, int]) -> None:
        self._check(cell)
        self.confirmed[cell] = True

    # -- queries ------------------------------------------------------------
    def _check(self, cell) -> None:
        if not (0 <= cell[0] < self.width and 0 <= cell[1] < self.height):
            raise BeliefError(f"cell {tuple(cell)} out of bounds")

    @property
    def log_odds(self) -> np.ndarray:
        lo = np.clip(self._prior_logit + self.evidence / EVIDENCE_SCALE, -self.l_max, self.l_max)
        lo[self.confirmed] = self.l_max
        return lo

    def probabilities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.log_odds))

    def posterior_prob(self, cell: tuple[int, int]) -> float:
        self._check(cell)
        lo = min(max(self._prior_logit + self.evidence[cell] / EVIDENCE_SCALE, -self.l_max),
                 self.l_max)
        if self.confirmed[cell]:
            lo = self.l_max
        return 1.0 / (1.0 + math.exp(-lo))

    @property
    def floor(self) -> float:
        return 1.0 / (1.0 + math.exp(self.l_max))

    def entropy(self) -> float:
        return float(binary_entropy_bits(self.probabilities()).sum())

    def copy(self) -> OccupancyBelief:
        other = OccupancyBelief.__new__(OccupancyBelief)
        other.__dict__.update(self.__dict__)
        other.evidence = self.evidence.copy()
        other.confirmed = self.confirmed.copy()
        other._applied = {k: v.copy() for k, v in self._applied.items()}
        return other

    def same_state(self, other: OccupancyBelief) -> bool:
        """Bit-identical grid and confirmation layer."""
        return (np.array_equal(self.evidence, other.evidence)
                and np.array_equal(self.confirmed, other.confirmed)
                and self.prior == other.prior)

    # -- serialisation ------------------------------------------------------
    def to_csv(self) -> str:
        """Dense probability grid; one line per row ``y``, columns ``x``."""
        p = self.probabilities()
        buf = io.StringIO()
        for y in range(self.height):
            buf.write(",".join(repr(float(v)) for v in p[:, y]))
            buf.write("\n")
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        """``SBEL`` magic, u32 width, u32 height, then row-major float32 probabilities."""
        header = _BINARY_MAGIC + struct.pack("<II", self.width, self.height)
        return header + self.probabilities().T.astype("<f4").tobytes()

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix == ".csv":
            path.write_text(self.to_csv())
        else:
            path.write_bytes(self.to_bytes())


def read_probability_csv(text: str) -> np.ndarray:
    rows = [[float(v) for v in line.split(",")] for line in text.splitlines() if line.strip()]
    return np.array(rows).T


def read_probability_bytes(data: bytes) -> np.ndarray:
    if data[:4] != _BINARY_MAGIC:
        raise BeliefError("not a belief snapshot")
    width, height = struct.unpack("<II", data[4:12])
    grid = np.frombuffer(data[12:], dtype="<f4")
    if grid.size != width * height:
        raise BeliefError("truncated belief snapshot")
    return grid.reshape(height, width).T.astype(float)


def binary_entropy_bits(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return np.nan_to_num(h, nan=0.0)


def update(belief: OccupancyBelief, detection: Detection) -> OccupancyBelief:
    return belief.update(detection)


def fuse_remote(belief: OccupancyBelief, detections) -> OccupancyBelief:
    """Fold :func:`update` over ``detections`` (Detection objects or batches)."""
    detections = list(detections)
    singles = [d for d in detections if isinstance(d, Detection)]
    for d in singles:
        x, y = d.cell
        if not (0 <= x < belief.width and 0 <= y < belief.height):
            raise BeliefError(f"cell {d.cell} out of bounds")
    for batch in DetectionBatch.from_detections(singles):
        belief.fuse_batch(batch)
    for d in detections:
        if isinstance(d, DetectionBatch):
            belief.fuse_batch(d)
    return belief


def posterior_prob(belief: OccupancyBelief, cell: tuple[int, int]) -> float:
    return belief.posterior_prob(cell)


def entropy(belief: OccupancyBelief) -> float:
    return belief.entropy()
