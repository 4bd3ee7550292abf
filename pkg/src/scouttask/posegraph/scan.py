"""Compressed landmark scans and their appearance signature."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGNATURE_BINS = 32
SIGNATURE_RANGE = 60.0


@dataclass(frozen=True, eq=False)
class CompressedScan:
    origin_robot: str
    node_id: int
    landmarks: np.ndarray
    signature: np.ndarray
    signature_range: float = SIGNATURE_RANGE
    scan_id: int = 0
    tick: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def key(self) -> tuple[str, int]:
        return (self.origin_robot, self.scan_id)

    def __len__(self) -> int:
        return int(self.landmarks.shape[0])


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])


def distance_signature(points: np.ndarray, bins: int = SIGNATURE_BINS,
                       signature_range: float = SIGNATURE_RANGE) -> np.ndarray:
    """L1-normalised histogram of pairwise landmark distances (rotation/translation invariant)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    hist = np.zeros(bins)
    if pts.shape[0] < 2:
        return hist
    iu = np.triu_indices(pts.shape[0], k=1)
    # rounding keeps rigidly moved copies out of floating-point bin-edge flips
    d = np.round(pairwise_distances(pts)[iu], 9)
    idx = np.minimum((d / signature_range * bins).astype(np.int64), bins - 1)
    np.add.at(hist, idx, 1.0)
    return hist / hist.sum()


def make_scan(origin_robot: str, node_id: int, landmarks, *, bins: int = SIGNATURE_BINS,
              signature_range: float = SIGNATURE_RANGE, scan_id: int = 0,
              tick: int = 0) -> CompressedScan:
    pts = np.array(landmarks, dtype=float).reshape(-1, 2)
    pts.setflags(write=False)
    sig = distance_signature(pts, bins, signature_range)
    sig.setflags(write=False)
    return CompressedScan(str(origin_robot), int(node_id), pts, sig, float(signature_range),
                          int(scan_id), int(tick))


def similarity_score(a: CompressedScan, b: CompressedScan) -> float:
    """1 - L1(signature_a, signature_b) / 2; scans with fewer than two landmarks score 0."""
    if a.signature.shape != b.signature.shape or a.signature_range != b.signature_range:
        raise ValueError("scans were built with incompatible signatures")
    if len(a) < 2 or len(b) < 2:
        return 0.0
    # sum in a fixed order so score(a, b) == score(b, a) bit for bit
    diff = np.abs(a.signature - b.signature)
    return float(max(0.0, 1.0 - 0.5 * float(np.sum(diff))))
