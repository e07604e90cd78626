"""Coarse token matching and window-based fine refinement.

Coarse stage: scaled inner-product scores between the two enhanced token
sets, a dual softmax (row softmax times column softmax), then mutual-
nearest-neighbour extraction above a confidence threshold.

Fine stage: for each surviving coarse match, crop a small window from each
fine feature map, interleave attention over the window tokens, and predict a
sub-pixel offset for the second image plus a match confidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import LayerRoles, TokenSeq, interleave, linear
from .backbone import FINE_STRIDE
from .params import LinearParams, linear_init
from .rng import Xorshift64Star
from .tensor import DiffTensor, ShapeError


@dataclass
class MatchSet:
    """Paired pixel coordinates with per-pair confidence.

    `index_pairs` carries the (i, j) token indices for coarse matches and is
    None at the fine level.
    """

    points_a: np.ndarray
    points_b: np.ndarray
    confidence: np.ndarray
    level: str
    index_pairs: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points_a)


@dataclass
class AssignmentMatrix:
    """Raw scores, their soft assignment, and the extraction threshold."""

    scores: DiffTensor
    soft: DiffTensor
    threshold: float

    def matches(self, points_a: np.ndarray, points_b: np.ndarray) -> MatchSet:
        return extract_coarse_matches(self.soft, self.threshold, points_a, points_b)


def assignment_matrix(fa: DiffTensor, fb: DiffTensor, threshold: float = 0.2,
                      scaled: bool = True) -> AssignmentMatrix:
    """Scores plus dual-softmax assignment for two enhanced token sets."""
    s = score_matrix(fa, fb, scaled=scaled)
    return AssignmentMatrix(scores=s, soft=dual_softmax(s), threshold=threshold)


@dataclass
class FineWindows:
    """Cropped window features around each coarse match, plus their centres."""

    windows_a: DiffTensor
    windows_b: DiffTensor
    cells_a: np.ndarray
    cells_b: np.ndarray
    size: int


def score_matrix(fa: DiffTensor, fb: DiffTensor, scaled: bool = True) -> DiffTensor:
    """S(i, j) = <fa_i, fb_j>, divided by sqrt(channels) unless `scaled` is off.

    The scaling keeps the dual softmax away from saturation at realistic
    channel counts; disable it for a literal inner product.
    """
    if fa.shape[-1] != fb.shape[-1]:
        raise ShapeError(f"channel mismatch: {fa.shape} vs {fb.shape}")
    s = T.matmul(fa, T.transpose(fb))
    if scaled:
        s = T.scale(s, 1.0 / math.sqrt(fa.shape[-1]))
    return s


def dual_softmax(s: DiffTensor) -> DiffTensor:
    """Elementwise product of column-wise and row-wise softmaxes of S."""
    return T.mul(T.softmax_axis(s, axis=0), T.softmax_axis(s, axis=1))


def extract_coarse_matches(g: DiffTensor | np.ndarray, threshold: float,
                           points_a: np.ndarray, points_b: np.ndarray) -> MatchSet:
    """Mutual strict row/column maxima of G above the threshold.

    Exact ties are rejected on both sides, so no token index can appear
    twice in the result.
    """
    gd = g.data if isinstance(g, DiffTensor) else np.asarray(g)
    if gd.ndim != 2 or gd.shape[0] != gd.shape[1]:
        raise ShapeError(f"assignment matrix must be square, got {gd.shape}")
    row_max = gd.max(axis=1, keepdims=True)
    col_max = gd.max(axis=0, keepdims=True)
    strict_row = (gd == row_max) & ((gd == row_max).sum(axis=1, keepdims=True) == 1)
    strict_col = (gd == col_max) & ((gd == col_max).sum(axis=0, keepdims=True) == 1)
    mask = strict_row & strict_col & (gd > threshold)
    ii, jj = np.nonzero(mask)
    return MatchSet(
        points_a=points_a[ii],
        points_b=points_b[jj],
        confidence=gd[ii, jj],
        level="coarse",
        index_pairs=np.stack([ii, jj], axis=1) if len(ii) else np.zeros((0, 2), dtype=int),
    )


def _fine_cells(points: np.ndarray, fine_shape: tuple[int, int]) -> np.ndarray:
    """Original-image pixel coords -> nearest fine-grid cell (row, col).

    Rounding is to nearest with ties toward +inf; cells are clipped into the
    map so border windows stay centred as close as possible.
    """
    cells = np.floor(points / FINE_STRIDE + 0.5).astype(np.int64)
    rc = cells[:, ::-1].copy()  # (x, y) -> (row, col)
    rc[:, 0] = np.clip(rc[:, 0], 0, fine_shape[0] - 1)
    rc[:, 1] = np.clip(rc[:, 1], 0, fine_shape[1] - 1)
    return rc


def crop_fine_windows(coarse: MatchSet, fine_a: DiffTensor, fine_b: DiffTensor,
                      window: int = 5) -> FineWindows:
    """Crop one window per coarse match from each fine map (zero padded)."""
    if window % 2 == 0:
        raise ValueError(f"window size must be odd, got {window}")
    cells_a = _fine_cells(coarse.points_a, fine_a.shape[1:])
    cells_b = _fine_cells(coarse.points_b, fine_b.shape[1:])
    k = len(coarse)
    if k == 0:
        empty = DiffTensor(np.zeros((0, fine_a.shape[0], window, window)))
        return FineWindows(empty, empty, cells_a, cells_b, window)
    return FineWindows(
        windows_a=T.crop_windows(fine_a, cells_a, window),
        windows_b=T.crop_windows(fine_b, cells_b, window),
        cells_a=cells_a,
        cells_b=cells_b,
        size=window,
    )


@dataclass
class FineHeadParams:
    """1x1 convolution stack after the window attention: trunk, pool, heads."""

    pre1: LinearParams
    pre2: LinearParams
    post1: LinearParams
    post2: LinearParams
    offset: LinearParams
    confidence: LinearParams

    def leaves(self, prefix="fine_head"):
        out = []
        for name in ("pre1", "pre2", "post1", "post2", "offset", "confidence"):
            out += getattr(self, name).leaves(f"{prefix}.{name}")
        return out


def init_fine_head(fine_channels: int, rng: Xorshift64Star) -> FineHeadParams:
    c = fine_channels
    return FineHeadParams(
        pre1=linear_init(rng, 2 * c, c),
        pre2=linear_init(rng, c, c),
        post1=linear_init(rng, c, c),
        post2=linear_init(rng, c, c),
        offset=linear_init(rng, c, 2),
        confidence=linear_init(rng, c, 1),
    )


def fine_refine(wins: FineWindows, layers: list[LayerRoles], head: FineHeadParams,
                use_rope: bool = True) -> tuple[DiffTensor, DiffTensor]:
    """Predict per-match offsets (pixels) and confidences from window pairs.

    Window features run through the same self/cross interleave as the coarse
    stage (with window-cell coordinates driving the position encoding), the
    pair is concatenated channel-wise, and a stack of 1x1 convolutions with a
    global max pool in the middle produces the two heads. 1x1 convolutions
    are computed in token layout, which is the same arithmetic.
    """
    k = wins.windows_a.shape[0]
    if k == 0:
        raise ValueError("fine_refine needs at least one window; caller must skip")
    c = wins.windows_a.shape[1]
    w = wins.size

    rows, cols = np.meshgrid(np.arange(w), np.arange(w), indexing="ij")
    coords = np.stack([rows.reshape(-1), cols.reshape(-1)], axis=1)

    def tokens(x):
        return TokenSeq(T.transpose(T.reshape(x, (k, c, w * w)), (0, 2, 1)), coords)

    ta, tb = interleave(tokens(wins.windows_a), tokens(wins.windows_b), layers,
                        use_rope=use_rope)
    joint = T.concat([ta.tokens, tb.tokens], axis=-1)
    trunk = T.gelu(linear(joint, head.pre1))
    trunk = T.gelu(linear(trunk, head.pre2))
    pooled = T.reduce_max(trunk, axis=1)
    trunk = T.gelu(linear(pooled, head.post1))
    trunk = T.gelu(linear(trunk, head.post2))
    delta = linear(trunk, head.offset)
    conf = T.sigmoid(linear(trunk, head.confidence))
    return delta, conf


def assemble_fine_matches(coarse: MatchSet, delta: DiffTensor | np.ndarray,
                          conf: DiffTensor | np.ndarray,
                          conf_gate: float = 0.5) -> MatchSet:
    """Shift the second-image points by the predicted offsets and gate on c."""
    dd = delta.data if isinstance(delta, DiffTensor) else np.asarray(delta)
    cd = conf.data if isinstance(conf, DiffTensor) else np.asarray(conf)
    cd = cd.reshape(-1)
    if not (len(coarse) == len(dd) == len(cd)):
        raise ShapeError(
            f"length mismatch: {len(coarse)} matches, {len(dd)} offsets, {len(cd)} confidences")
    keep = cd >= conf_gate
    return MatchSet(
        points_a=coarse.points_a[keep],
        points_b=coarse.points_b[keep] + dd[keep],
        confidence=cd[keep],
        level="fine",
    )
