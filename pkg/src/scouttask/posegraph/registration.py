"""Landmark correspondence and robust 2D rigid registration."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from scouttask.posegraph.scan import CompressedScan, pairwise_distances
from scouttask.posegraph.se2 import Pose2

INLIER_THRESHOLD = 0.5
MIN_INLIERS = 4
MAX_ITERATIONS = 200
DESCRIPTOR_RADIUS = 30.0
MATCH_TOLERANCE = 0.25
MIN_SUPPORT = 2
SIGMA_FLOOR = 1e-3


@dataclass
class RelativePoseEstimate:
    """``transform`` maps points of the first scan's frame into the second's."""

    transform: Pose2
    covariance: np.ndarray
    inliers: np.ndarray  # (k, 2) index pairs into (a, b)

    def __iter__(self):
        yield self.transform
        yield self.covariance


def _neighbour_distances(pts: np.ndarray, radius: float) -> np.ndarray:
    d = pairwise_distances(pts)
    np.fill_diagonal(d, np.nan)
    d[d > radius] = np.nan
    return d


def match_scores(a: np.ndarray, b: np.ndarray, radius: float = DESCRIPTOR_RADIUS,
                 tol: float = MATCH_TOLERANCE) -> np.ndarray:
    """Score[i, j] = how many local pairwise distances landmark i of ``a`` and
    landmark j of ``b`` have in common (within ``tol``), taken symmetrically."""
    da = _neighbour_distances(a, radius)
    db = _neighbour_distances(b, radius)
    na, nb = da.shape[0], db.shape[0]
    scores = np.zeros((na, nb), dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, na * nb * nb))
    for start in range(0, na, chunk):
        blk = da[start:start + chunk]
        close = np.abs(blk[:, None, :, None] - db[None, :, None, :]) <= tol
        count_a = close.any(axis=3).sum(axis=2)
        count_b = close.any(axis=2).sum(axis=2)
        scores[start:start + chunk] = np.minimum(count_a, count_b)
    return scores


def mutual_matches(scores: np.ndarray, min_support: int = MIN_SUPPORT) -> np.ndarray:
    if scores.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    best_b = scores.argmax(axis=1)
    best_a = scores.argmax(axis=0)
    ia = np.arange(scores.shape[0])
    keep = (best_a[best_b] == ia) & (scores[ia, best_b] >= min_support)
    return np.stack([ia[keep], best_b[keep]], axis=1)


def fit_rigid(a: np.ndarray, b: np.ndarray) -> Pose2:
    """Least-squares rotation + translation with ``b ~ R a + t`` (centroid + Procrustes)."""
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    qa, qb = a - ca, b - cb
    cross = float(np.sum(qa[:, 0] * qb[:, 1] - qa[:, 1] * qb[:, 0]))
    dot = float(np.sum(qa[:, 0] * qb[:, 0] + qa[:, 1] * qb[:, 1]))
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    t = cb - np.array([c * ca[0] - s * ca[1], s * ca[0] + c * ca[1]])
    return Pose2(float(t[0]), float(t[1]), theta)


def _pair_hypotheses(a: np.ndarray, b: np.ndarray, pairs: np.ndarray, tol: float):
    p, q = pairs[:, 0], pairs[:, 1]
    va = a[q] - a[p]
    vb = b[q] - b[p]
    la = np.hypot(va[:, 0], va[:, 1])
    lb = np.hypot(vb[:, 0], vb[:, 1])
    ok = (la > 1e-9) & (np.abs(la - lb) <= 2 * tol)
    theta = np.arctan2(va[:, 0] * vb[:, 1] - va[:, 1] * vb[:, 0],
                       va[:, 0] * vb[:, 0] + va[:, 1] * vb[:, 1])
    c, s = np.cos(theta), np.sin(theta)
    ma = 0.5 * (a[p] + a[q])
    mb = 0.5 * (b[p] + b[q])
    tx = mb[:, 0] - (c * ma[:, 0] - s * ma[:, 1])
    ty = mb[:, 1] - (s * ma[:, 0] + c * ma[:, 1])
    return ok, c, s, tx, ty


def _residuals(t: Pose2, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.hypot(*(t.transform_points(a) - b).T)


def registration_covariance(t: Pose2, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    r = t.transform_points(a) - b
    dof = max(1, 2 * a.shape[0] - 3)
    sigma2 = max(float(np.sum(r * r)) / dof, SIGMA_FLOOR**2)
    ra = t.transform_points(a) - np.array([t.x, t.y])
    jtj = np.zeros((3, 3))
    for px, py in ra:
        J = np.array([[1.0, 0.0, -py], [0.0, 1.0, px]])
        jtj += J.T @ J
    cov = sigma2 * np.linalg.inv(jtj)
    return 0.5 * (cov + cov.T)


def register_points(a: np.ndarray, b: np.ndarray, correspondences: np.ndarray, *,
                    inlier_threshold: float = INLIER_THRESHOLD, min_inliers: int = MIN_INLIERS,
                    max_iterations: int = MAX_ITERATIONS,
                    rng: np.random.Generator | None = None) -> RelativePoseEstimate | None:
    """Minimal 2-point consensus over putative correspondences, then least-squares refinement."""
    m = correspondences.shape[0]
    if m < 2:
        return None
    ca = a[correspondences[:, 0]]
    cb = b[correspondences[:, 1]]
    all_pairs = m * (m - 1) // 2
    if all_pairs <= max_iterations:
        iu = np.triu_indices(m, k=1)
        pairs = np.stack(iu, axis=1)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        first = rng.integers(0, m, size=max_iterations)
        second = (first + rng.integers(1, m, size=max_iterations)) % m
        pairs = np.stack([first, second], axis=1)
    ok, c, s, tx, ty = _pair_hypotheses(ca, cb, pairs, inlier_threshold)
    if not ok.any():
        return None
    c, s, tx, ty = c[ok], s[ok], tx[ok], ty[ok]
    px = c[:, None] * ca[None, :, 0] - s[:, None] * ca[None, :, 1] + tx[:, None]
    py = s[:, None] * ca[None, :, 0] + c[:, None] * ca[None, :, 1] + ty[:, None]
    res = np.hypot(px - cb[None, :, 0], py - cb[None, :, 1])
    inl = res <= inlier_threshold
    counts = inl.sum(axis=1)
    score = np.where(inl, res, 0.0).sum(axis=1)
    order = np.lexsort((score, -counts))
    mask = inl[order[0]]
    if mask.sum() < 2:
        return None
    transform = fit_rigid(ca[mask], cb[mask])
    for _ in range(10):
        new_mask = _residuals(transform, ca, cb) <= inlier_threshold
        if new_mask.sum() < 2:
            return None
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
        transform = fit_rigid(ca[mask], cb[mask])
    if mask.sum() < max(2, min_inliers):
        return None
    inlier_a = ca[mask]
    if float(np.ptp(inlier_a, axis=0).max()) < 1e-9:
        return None
    cov = registration_covariance(transform, inlier_a, cb[mask])
    return RelativePoseEstimate(transform, cov, correspondences[mask])


def estimate_relative_pose(a: CompressedScan, b: CompressedScan, *,
                           inlier_threshold: float = INLIER_THRESHOLD,
                           min_inliers: int = MIN_INLIERS,
                           max_iterations: int = MAX_ITERATIONS,
                           descriptor_radius: float = DESCRIPTOR_RADIUS,
                           match_tolerance: float = MATCH_TOLERANCE,
                           rng: np.random.Generator | None = None
                           ) -> RelativePoseEstimate | None:
    """Transform ``T`` with ``b.landmarks ~ T * a.landmarks``, or None when registration fails.

    Since landmarks are expressed in each scan's sensor frame, ``T`` is the
    pose of scan ``a``'s node seen from scan ``b``'s node.
    """
    pa, pb = a.landmarks, b.landmarks
    if pa.shape[0] < 2 or pb.shape[0] < 2:
        return None
    scores = match_scores(pa, pb, descriptor_radius, match_tolerance)
    matches = mutual_matches(scores)
    est = register_points(pa, pb, matches, inlier_threshold=inlier_threshold,
                          min_inliers=min_inliers, max_iterations=max_iterations, rng=rng)
    if est is None:
        return None
    return refine_nearest(est, pa, pb, inlier_threshold)


def _nearest_pairs(t: Pose2, a: np.ndarray, b: np.ndarray, threshold: float) -> np.ndarray:
    """Mutual nearest neighbours between ``t * a`` and ``b`` closer than ``threshold``."""
    ta = t.transform_points(a)
    d = np.hypot(ta[:, None, 0] - b[None, :, 0], ta[:, None, 1] - b[None, :, 1])
    nb = d.argmin(axis=1)
    na = d.argmin(axis=0)
    ia = np.arange(a.shape[0])
    keep = (na[nb] == ia) & (d[ia, nb] <= threshold)
    return np.stack([ia[keep], nb[keep]], axis=1)


def refine_nearest(est: RelativePoseEstimate, a: np.ndarray, b: np.ndarray,
                   threshold: float, iterations: int = 10) -> RelativePoseEstimate:
    """Re-associate every landmark by proximity under the consensus transform and
    refit; descriptor matching alone misses part of the true overlap."""
    transform, pairs = est.transform, est.inliers
    for _ in range(iterations):
        new = _nearest_pairs(transform, a, b, threshold)
        if new.shape[0] < pairs.shape[0]:
            break
        same = np.array_equal(new, pairs)
        pairs = new
        transform = fit_rigid(a[pairs[:, 0]], b[pairs[:, 1]])
        if same:
            break
    if pairs is est.inliers:
        return est
    cov = registration_covariance(transform, a[pairs[:, 0]], b[pairs[:, 1]])
    return RelativePoseEstimate(transform, cov, pairs)
