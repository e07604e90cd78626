"""Ground-truth label construction and the three-term training loss.

The coarse matching loss is a focal loss on the soft assignment matrix, the
fine losses are a masked squared-offset regression and a binary confidence
cross-entropy, and the total is their weighted sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import COARSE_STRIDE
from .geometry import homography_apply_batch, invert_homography
from .tensor import DiffTensor

EPS = 1e-8


@dataclass
class LossWeights:
    """Weighting coefficients and focal/masking constants."""

    regression: float = 0.2     # weight on the offset loss
    classification: float = 0.2  # weight on the confidence loss
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    offset_limit: float = 8.0   # ground-truth offsets beyond this are masked

    def __post_init__(self):
        if self.regression < 0 or self.classification < 0:
            raise ValueError("loss weights must be non-negative")
        if min(self.focal_alpha, self.focal_gamma, self.offset_limit) <= 0:
            raise ValueError("focal and masking constants must be positive")


@dataclass
class GroundTruthLabels:
    """Supervision for one scene.

    `match_indices` is fixed by the homography; the fine-level fields depend
    on which coarse matches are refined and are filled in per forward pass
    via `gt_fine_labels`.
    """

    match_indices: np.ndarray
    offsets: np.ndarray | None = None
    confidences: np.ndarray | None = None
    valid_mask: np.ndarray | None = None


def gt_coarse_labels(h_mat: np.ndarray, shape_a: tuple[int, int],
                     shape_b: tuple[int, int],
                     stride: int = COARSE_STRIDE) -> np.ndarray:
    """Index pairs (i, j) of coarse cells matched by the homography.

    Each first-image cell centre is warped; its containing second-image cell
    is kept only if warping that cell's centre back lands inside the original
    cell (round-trip consistency) and the forward point is inside image B.
    Returns an array of shape (K, 2).
    """
    h_mat = np.asarray(h_mat, dtype=np.float64)
    h_inv = invert_homography(h_mat)
    ha, wa = shape_a
    hb, wb = shape_b
    half = (stride - 1) / 2.0

    cols_a, rows_a = np.meshgrid(np.arange(wa // stride), np.arange(ha // stride))
    centers_a = np.stack([cols_a.reshape(-1) * stride + half,
                          rows_a.reshape(-1) * stride + half], axis=1)
    warped = homography_apply_batch(h_mat, centers_a)

    inside = ((warped[:, 0] >= 0) & (warped[:, 0] < wb)
              & (warped[:, 1] >= 0) & (warped[:, 1] < hb))
    cell_b = np.floor(warped / stride).astype(np.int64)

    pairs = []
    cells_per_row_a = wa // stride
    cells_per_row_b = wb // stride
    for i in np.nonzero(inside)[0]:
        cb_col, cb_row = cell_b[i]
        if not (0 <= cb_row < hb // stride and 0 <= cb_col < cells_per_row_b):
            continue
        center_b = np.array([cb_col * stride + half, cb_row * stride + half])
        back = homography_apply_batch(h_inv, center_b[None, :])[0]
        ca_row, ca_col = divmod(int(i), cells_per_row_a)
        if (stride * ca_col <= back[0] < stride * (ca_col + 1)
                and stride * ca_row <= back[1] < stride * (ca_row + 1)):
            pairs.append((int(i), int(cb_row * cells_per_row_b + cb_col)))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.asarray(pairs, dtype=np.int64)


def gt_fine_labels(h_mat: np.ndarray, points_a: np.ndarray, points_b: np.ndarray,
                   offset_limit: float = 8.0):
    """Per-match ground-truth offsets, confidence labels, and validity mask.

    The true second-image location of each first-image point is its warp; the
    offset is that location minus the coarse second-image point. Matches whose
    true offset exceeds `offset_limit` (L2) are negatives and are excluded
    from the regression.
    """
    offsets = homography_apply_batch(h_mat, points_a) - points_b
    valid = np.linalg.norm(offsets, axis=1) <= offset_limit
    confidences = valid.astype(np.float64).reshape(-1, 1)
    return offsets, confidences, valid


def matching_loss(g: DiffTensor, match_indices: np.ndarray, w: LossWeights,
                  strict_literal_normalizer: bool = False) -> DiffTensor:
    """Focal loss over the soft assignment matrix.

    Positive entries (ground-truth pairs) are averaged separately from the
    negatives. The negative term is normalised by the count of negative
    entries; `strict_literal_normalizer` switches to N - K for comparison.
    """
    n = g.shape[0]
    match_indices = np.asarray(match_indices)
    k = len(match_indices)
    if k == 0:
        raise ValueError("matching_loss needs at least one ground-truth pair")

    pos_mask = np.zeros(g.shape)
    pos_mask[match_indices[:, 0], match_indices[:, 1]] = 1.0
    neg_count = (n - k) if strict_literal_normalizer else (g.size - k)

    gc = T.clamp(g, EPS, 1.0 - EPS)
    one_minus = T.sub(DiffTensor(np.ones(g.shape)), gc)
    pos = T.mul(T.pow_const(one_minus, w.focal_gamma), T.log(gc))
    pos_term = T.scale(T.reduce_sum(T.mul(pos, DiffTensor(pos_mask))),
                       w.focal_alpha / k)
    if neg_count > 0:
        neg = T.mul(T.pow_const(gc, w.focal_gamma), T.log(one_minus))
        neg_term = T.scale(T.reduce_sum(T.mul(neg, DiffTensor(1.0 - pos_mask))),
                           (1.0 - w.focal_alpha) / neg_count)
        pos_term = T.add(pos_term, neg_term)
    return T.scale(pos_term, -1.0)


def regression_loss(delta: DiffTensor, offsets_gt: np.ndarray,
                    valid_mask: np.ndarray) -> DiffTensor:
    """Mean squared offset error over the valid matches."""
    offsets_gt = np.asarray(offsets_gt, dtype=np.float64)
    valid_mask = np.asarray(valid_mask, dtype=bool)
    if delta.shape != offsets_gt.shape:
        raise ValueError(f"shape mismatch: {delta.shape} vs {offsets_gt.shape}")
    count = int(valid_mask.sum())
    if count == 0:
        warnings.warn("regression_loss: no valid ground-truth offsets; returning 0")
        return DiffTensor(0.0)
    diff = T.sub(DiffTensor(offsets_gt), delta)
    sq = T.mul(diff, diff)
    masked = T.mul(sq, DiffTensor(valid_mask[:, None].astype(np.float64)))
    return T.scale(T.reduce_sum(masked), 1.0 / count)


def classification_loss(conf: DiffTensor, conf_gt: np.ndarray) -> DiffTensor:
    """Mean binary cross-entropy between predicted and label confidences."""
    conf_gt = np.asarray(conf_gt, dtype=np.float64).reshape(conf.shape)
    k = conf_gt.shape[0]
    c = T.clamp(conf, EPS, 1.0 - EPS)
    one_minus = T.sub(DiffTensor(np.ones(c.shape)), c)
    pos = T.mul(DiffTensor(conf_gt), T.log(c))
    neg = T.mul(DiffTensor(1.0 - conf_gt), T.log(one_minus))
    return T.scale(T.reduce_sum(T.add(pos, neg)), -1.0 / k)


def total_loss(match: DiffTensor, regression: DiffTensor, classification: DiffTensor,
               w: LossWeights) -> DiffTensor:
    """match + regression_weight * regression + classification_weight * classification."""
    return T.add(match, T.add(T.scale(regression, w.regression),
                              T.scale(classification, w.classification)))
