"""Deterministic synthetic planar scenes with exact ground truth.

A scene is a seeded Gaussian-bump texture, a seeded homography bounded by
configurable limits, the backward-warped second image, and the coarse-cell
ground-truth correspondences implied by the homography. Identical seeds
reproduce scenes bit-for-bit (the PRNG is pinned in `rng.py`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import invert_homography, homography_apply_batch
from .losses import GroundTruthLabels, gt_coarse_labels
from .rng import Xorshift64Star

BUMP_COUNT = 32
BUMP_SIGMA = (1.5, 6.0)
BUMP_AMPLITUDE = (0.3, 1.0)  # magnitude range; signs alternate with the stream
_HOMOGRAPHY_SEED_TWEAK = 0xA5A5A5A5A5A5A5A5  # xored into the pair seed


@dataclass
class HomographyLimits:
    max_rotation_deg: float = 25.0
    scale_range: tuple[float, float] = (0.8, 1.25)
    max_translation: float = 8.0
    max_perspective: float = 1e-3


@dataclass
class PlanarScene:
    image_a: np.ndarray
    image_b: np.ndarray
    h_mat: np.ndarray
    seed: int
    gt_labels: GroundTruthLabels


def gen_texture(height: int, width: int, seed: int) -> np.ndarray:
    """Sum of randomly placed signed Gaussian bumps, normalised to [0, 1].

    Signed amplitudes keep the empty background mid-grey after
    normalisation, so regions warped in from outside the frame (exactly
    zero) stay distinguishable from untextured image content.
    """
    if height % 8 or width % 8:
        raise ValueError(f"dims ({height}, {width}) must be divisible by 8")
    rng = Xorshift64Star(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((height, width))
    for _ in range(BUMP_COUNT):
        cx = rng.uniform(0.0, width)
        cy = rng.uniform(0.0, height)
        sigma = rng.uniform(*BUMP_SIGMA)
        amp = rng.uniform(*BUMP_AMPLITUDE)
        if rng.next_u64() & 1:
            amp = -amp
        img += amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo)


def compose_homography(angle_rad: float, scale: float, translation, perspective,
                       center) -> np.ndarray:
    """Build rotation/scale/translation/perspective about `center`, entrywise.

    The upper-left 2x2 block is exactly scale * rotation and the bottom-right
    entry is exactly 1, so the block determinant equals scale squared
    regardless of the perspective terms. The translation column is solved so
    that the centre maps exactly to centre + translation.
    """
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    a = scale * np.array([[c, -s], [s, c]])
    p = np.asarray(perspective, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    ctr = np.asarray(center, dtype=np.float64)
    t_col = (ctr + t) * (1.0 + p @ ctr) - a @ ctr
    h = np.eye(3)
    h[:2, :2] = a
    h[:2, 2] = t_col
    h[2, :2] = p
    return h


def sample_homography(height: int, width: int, seed: int,
                      limits: HomographyLimits = HomographyLimits()) -> np.ndarray:
    """Seeded random homography about the image centre, within `limits`."""
    rng = Xorshift64Star(seed)
    angle = math.radians(rng.uniform(-limits.max_rotation_deg, limits.max_rotation_deg))
    scale = rng.uniform(*limits.scale_range)
    tx = rng.uniform(-limits.max_translation, limits.max_translation)
    ty = rng.uniform(-limits.max_translation, limits.max_translation)
    p1 = rng.uniform(-limits.max_perspective, limits.max_perspective)
    p2 = rng.uniform(-limits.max_perspective, limits.max_perspective)
    center = ((width - 1) / 2.0, (height - 1) / 2.0)
    return compose_homography(angle, scale, (tx, ty), (p1, p2), center)


def warp_bilinear(img: np.ndarray, h_mat: np.ndarray) -> np.ndarray:
    """Backward warp: output pixel p samples the input at H^-1(p).

    Bilinear interpolation with zero fill outside the source image. Pixel
    (row r, col c) sits at coordinate (x=c, y=r).
    """
    img = np.asarray(img, dtype=np.float64)
    h_inv = invert_homography(h_mat)
    height, width = img.shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    pts = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    src = homography_apply_batch(h_inv, pts)
    sx, sy = src[:, 0], src[:, 1]

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    out = np.zeros(height * width)
    for dy, dx, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                        (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi = x0 + dx
        yi = y0 + dy
        ok = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)
        vals = np.zeros(height * width)
        vals[ok] = img[yi[ok], xi[ok]]
        out += wgt * vals
    return out.reshape(height, width)


def make_pair(height: int, width: int, seed: int,
              limits: HomographyLimits = HomographyLimits()) -> PlanarScene:
    """Bundle texture, sampled homography, warped image, and labels."""
    image_a = gen_texture(height, width, seed)
    h_mat = sample_homography(height, width, seed ^ _HOMOGRAPHY_SEED_TWEAK, limits)
    image_b = warp_bilinear(image_a, h_mat)
    pairs = gt_coarse_labels(h_mat, (height, width), (height, width))
    return PlanarScene(image_a=image_a, image_b=image_b, h_mat=h_mat, seed=seed,
                       gt_labels=GroundTruthLabels(match_indices=pairs))
