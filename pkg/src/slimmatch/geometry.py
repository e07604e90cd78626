"""Homography algebra, relative pose error, and the evaluation metrics.

Angles are reported in degrees. Threshold comparisons are inclusive: an
error exactly at the threshold counts as correct.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

DET_EPS = 1e-12
MMA_THRESHOLDS = tuple(range(1, 11))
CCM_THRESHOLDS = (1, 3, 5)
AUC_THRESHOLDS = (5, 10, 20)


class DegenerateGeometryError(ValueError):
    """Raised by estimators when the input configuration has no solution."""


def normalize_homography(h: np.ndarray) -> np.ndarray:
    """Scale so the bottom-right entry is 1 (when it is nonzero)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {h.shape}")
    if abs(h[2, 2]) > DET_EPS:
        h = h / h[2, 2]
    return h


def invert_homography(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if abs(np.linalg.det(h)) <= DET_EPS:
        raise DegenerateGeometryError("homography is singular")
    return normalize_homography(np.linalg.inv(h))


def homography_apply(h: np.ndarray, point) -> tuple[float, float]:
    """Projectively warp one (x, y) point."""
    x, y = point
    h = np.asarray(h, dtype=np.float64)
    v = h @ np.array([x, y, 1.0])
    if abs(v[2]) <= DET_EPS:
        raise DegenerateGeometryError(f"point {point} maps to infinity")
    return (v[0] / v[2], v[1] / v[2])


def homography_apply_batch(h: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Warp an (N, 2) array of points; same convention as homography_apply."""
    points = np.asarray(points, dtype=np.float64)
    ones = np.ones((points.shape[0], 1))
    v = np.concatenate([points, ones], axis=1) @ np.asarray(h, dtype=np.float64).T
    w = v[:, 2]
    if (np.abs(w) <= DET_EPS).any():
        raise DegenerateGeometryError("a point maps to infinity")
    return v[:, :2] / w[:, None]


def _hartley_normalization(points: np.ndarray) -> np.ndarray:
    centroid = points.mean(axis=0)
    dist = np.linalg.norm(points - centroid, axis=1).mean()
    if dist <= DET_EPS:
        raise DegenerateGeometryError("all points coincide")
    s = math.sqrt(2.0) / dist
    return np.array([[s, 0.0, -s * centroid[0]],
                     [0.0, s, -s * centroid[1]],
                     [0.0, 0.0, 1.0]])


def homography_dlt(points_a: np.ndarray, points_b: np.ndarray) -> np.ndarray:
    """Least-squares homography from >= 4 correspondences (normalized DLT).

    Exact on noiseless data. Raises on degenerate configurations (any rank
    deficiency beyond the one-dimensional solution space, e.g. collinear
    points).
    """
    points_a = np.asarray(points_a, dtype=np.float64)
    points_b = np.asarray(points_b, dtype=np.float64)
    if points_a.shape != points_b.shape or points_a.ndim != 2 or points_a.shape[1] != 2:
        raise ValueError(f"point arrays disagree: {points_a.shape} vs {points_b.shape}")
    k = points_a.shape[0]
    if k < 4:
        raise ValueError(f"need at least 4 correspondences, got {k}")

    ta = _hartley_normalization(points_a)
    tb = _hartley_normalization(points_b)
    pa = homography_apply_batch(ta, points_a)
    pb = homography_apply_batch(tb, points_b)

    a = np.zeros((2 * k, 9))
    for i, ((x, y), (u, v)) in enumerate(zip(pa, pb)):
        a[2 * i] = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]
        a[2 * i + 1] = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]
    _, s, vt = np.linalg.svd(a)
    # a rank below 8 means the solution is not unique
    if s[7] <= 1e-9 * s[0]:
        raise DegenerateGeometryError("degenerate configuration (rank < 8)")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(tb) @ h_norm @ ta
    if abs(np.linalg.det(h)) <= DET_EPS:
        raise DegenerateGeometryError("estimated homography is singular")
    return normalize_homography(h)


@dataclass
class PoseDelta:
    """Rotation and translation-direction errors in degrees."""

    rotation_deg: float
    translation_deg: float

    @property
    def max_deg(self) -> float:
        return max(self.rotation_deg, self.translation_deg)


def pose_error(r: np.ndarray, t: np.ndarray,
               r_est: np.ndarray, t_est: np.ndarray) -> PoseDelta:
    """Angular errors between a ground-truth and an estimated relative pose."""
    r = np.asarray(r, dtype=np.float64)
    r_est = np.asarray(r_est, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(3)
    t_est = np.asarray(t_est, dtype=np.float64).reshape(3)
    for mat in (r, r_est):
        if np.abs(mat.T @ mat - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation matrix is not orthonormal")
    nt, ne = np.linalg.norm(t), np.linalg.norm(t_est)
    if nt <= DET_EPS or ne <= DET_EPS:
        raise ValueError("translation vectors must be nonzero")
    cos_t = np.clip(t_est @ t / (ne * nt), -1.0, 1.0)
    cos_r = np.clip((np.trace(r_est.T @ r) - 1.0) / 2.0, -1.0, 1.0)
    return PoseDelta(rotation_deg=math.degrees(math.acos(cos_r)),
                     translation_deg=math.degrees(math.acos(cos_t)))


def auc_at_thresholds(errors, thresholds=AUC_THRESHOLDS) -> dict[float, float]:
    """Area under the cumulative error curve, exactly integrated.

    With the empirical step CDF F, AUC(t) = (1/t) * integral_0^t F(e) de,
    which reduces to the mean of max(0, t - e_i) / t over the errors.
    """
    errors = np.asarray(list(errors), dtype=np.float64)
    if errors.size == 0:
        raise ValueError("auc_at_thresholds needs at least one error value")
    if (errors < 0).any():
        raise ValueError("errors must be non-negative")
    return {float(t): float(np.maximum(0.0, t - errors).mean() / t) for t in thresholds}


def mma(pair_matches, h_list, thresholds=MMA_THRESHOLDS) -> dict[float, float]:
    """Mean matching accuracy across image pairs.

    `pair_matches` holds one (points_a, points_b) tuple per pair; each pair
    contributes its fraction of matches whose reprojection error is within
    the threshold (inclusive). A pair with no matches contributes zero.
    """
    per_pair_errors = []
    for (pa, pb), h in zip(pair_matches, h_list):
        pa = np.asarray(pa, dtype=np.float64).reshape(-1, 2)
        pb = np.asarray(pb, dtype=np.float64).reshape(-1, 2)
        if len(pa) == 0:
            warnings.warn("mma: a pair has no matches; it contributes 0")
            per_pair_errors.append(None)
            continue
        per_pair_errors.append(np.linalg.norm(
            homography_apply_batch(h, pa) - pb, axis=1))
    out = {}
    for t in thresholds:
        fracs = [0.0 if e is None else float((e <= t).mean()) for e in per_pair_errors]
        out[float(t)] = float(np.mean(fracs))
    return out


def corner_error(h_gt: np.ndarray, h_pred: np.ndarray,
                 image_dims: tuple[int, int]) -> float:
    """Mean reprojection disagreement of the four image corners."""
    height, width = image_dims
    corners = np.array([[0.0, 0.0], [width - 1.0, 0.0],
                        [0.0, height - 1.0], [width - 1.0, height - 1.0]])
    diff = homography_apply_batch(h_gt, corners) - homography_apply_batch(h_pred, corners)
    return float(np.linalg.norm(diff, axis=1).mean())


def ccm(h_gt_list, h_pred_list, dims_list, thresholds=CCM_THRESHOLDS) -> dict[float, float]:
    """Fraction of pairs whose mean corner error is within each threshold.

    A pair whose predicted homography is missing (None) fails all thresholds.
    """
    errors = []
    for h_gt, h_pred, dims in zip(h_gt_list, h_pred_list, dims_list):
        errors.append(math.inf if h_pred is None else corner_error(h_gt, h_pred, dims))
    errors = np.asarray(errors)
    return {float(t): float((errors <= t).mean()) for t in thresholds}
