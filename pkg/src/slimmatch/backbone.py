"""CNN + feature-pyramid encoder.

Produces a coarse feature map at 1/8 resolution (matching tokens), a fine
map at 1/2 resolution (refinement windows), and the pixel coordinates of the
coarse grid cells. The encoder is a reduced residual design: a stride-2 stem
followed by three stages at strides (1, 2, 2) with two residual blocks each,
then top-down pyramid fusion. Input images are single-channel with values
in [0, 1] and dimensions divisible by 8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ConvParams, conv_init
from .rng import Xorshift64Star
from .tensor import DiffTensor

COARSE_STRIDE = 8
FINE_STRIDE = 2


@dataclass
class BackboneConfig:
    stem_width: int = 96
    stage_widths: tuple[int, int, int] = (96, 128, 192)
    coarse_channels: int = 192
    fine_channels: int = 96

    def __post_init__(self):
        if min(self.stem_width, *self.stage_widths,
               self.coarse_channels, self.fine_channels) <= 0:
            raise ValueError("all backbone widths must be positive")


TINY_BACKBONE = BackboneConfig(stem_width=8, stage_widths=(8, 12, 16),
                               coarse_channels=16, fine_channels=8)


@dataclass
class FeaturePyramid:
    """Per-image encoder output.

    `keypoints` row i is the (x, y) pixel centre of coarse cell i in
    row-major order, so keypoint i always pairs with flattened token i.
    """

    coarse: DiffTensor
    fine: DiffTensor
    keypoints: np.ndarray


@dataclass
class NormParams:
    """Per-channel affine for instance normalisation."""

    gain: DiffTensor
    shift: DiffTensor

    def leaves(self, prefix):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.shift", self.shift)]


def norm_init(channels: int) -> NormParams:
    return NormParams(DiffTensor(np.ones((channels, 1)), requires_grad=True),
                      DiffTensor(np.zeros((channels, 1)), requires_grad=True))


def instance_norm(x: DiffTensor, p: NormParams, eps: float = 1e-5) -> DiffTensor:
    """Normalise each channel of a C x H x W map over its spatial extent.

    Keeps feature statistics comparable between images regardless of how
    much of the frame is warped-in content versus empty fill.
    """
    c, h, w = x.shape
    flat = T.reshape(x, (c, h * w))
    mean = T.reduce_mean(flat, axis=1, keepdims=True)
    centered = T.sub(flat, mean)
    var = T.reduce_mean(T.mul(centered, centered), axis=1, keepdims=True)
    inv = T.pow_const(T.add(var, DiffTensor(np.full((c, 1), eps))), -0.5)
    out = T.add(T.mul(T.mul(centered, inv), p.gain), p.shift)
    return T.reshape(out, (c, h, w))


@dataclass
class ResidualBlockParams:
    conv1: ConvParams
    norm1: NormParams
    conv2: ConvParams
    norm2: NormParams
    proj: ConvParams | None

    def leaves(self, prefix):
        out = self.conv1.leaves(f"{prefix}.conv1") + self.norm1.leaves(f"{prefix}.norm1")
        out += self.conv2.leaves(f"{prefix}.conv2") + self.norm2.leaves(f"{prefix}.norm2")
        if self.proj is not None:
            out += self.proj.leaves(f"{prefix}.proj")
        return out


@dataclass
class BackboneParams:
    stem: ConvParams
    stem_norm: NormParams
    stages: list[list[ResidualBlockParams]]
    lat3: ConvParams
    lat2: ConvParams
    lat1: ConvParams
    red2: ConvParams
    smooth2: ConvParams
    smooth1: ConvParams

    def leaves(self, prefix="backbone"):
        out = self.stem.leaves(f"{prefix}.stem")
        out += self.stem_norm.leaves(f"{prefix}.stem_norm")
        for si, blocks in enumerate(self.stages):
            for bi, block in enumerate(blocks):
                out += block.leaves(f"{prefix}.stage{si}.block{bi}")
        for name in ("lat3", "lat2", "lat1", "red2", "smooth2", "smooth1"):
            out += getattr(self, name).leaves(f"{prefix}.{name}")
        return out


_STAGE_STRIDES = (1, 2, 2)
_BLOCKS_PER_STAGE = 2


def init_backbone(cfg: BackboneConfig, rng: Xorshift64Star) -> BackboneParams:
    stem = conv_init(rng, cfg.stem_width, 1, 3, bias=False)
    stages = []
    c_in = cfg.stem_width
    for width, stride in zip(cfg.stage_widths, _STAGE_STRIDES):
        blocks = []
        for b in range(_BLOCKS_PER_STAGE):
            s = stride if b == 0 else 1
            needs_proj = s != 1 or c_in != width
            blocks.append(ResidualBlockParams(
                conv1=conv_init(rng, width, c_in, 3, bias=False),
                norm1=norm_init(width),
                conv2=conv_init(rng, width, width, 3, bias=False),
                norm2=norm_init(width),
                proj=conv_init(rng, width, c_in, 1) if needs_proj else None,
            ))
            c_in = width
        stages.append(blocks)
    ch = cfg.coarse_channels
    cf = cfg.fine_channels
    return BackboneParams(
        stem=stem,
        stem_norm=norm_init(cfg.stem_width),
        stages=stages,
        lat3=conv_init(rng, ch, cfg.stage_widths[2], 1),
        lat2=conv_init(rng, cf, cfg.stage_widths[1], 1),
        lat1=conv_init(rng, cf, cfg.stage_widths[0], 1),
        red2=conv_init(rng, cf, ch, 1),
        smooth2=conv_init(rng, cf, cf, 3),
        smooth1=conv_init(rng, cf, cf, 3),
    )


def _residual_block(x: DiffTensor, p: ResidualBlockParams, stride: int) -> DiffTensor:
    y = T.gelu(instance_norm(T.conv2d(x, p.conv1.kernel, p.conv1.bias,
                                      stride=stride, padding=1), p.norm1))
    y = instance_norm(T.conv2d(y, p.conv2.kernel, p.conv2.bias, stride=1, padding=1),
                      p.norm2)
    if p.proj is not None:
        shortcut = T.conv2d(x, p.proj.kernel, p.proj.bias, stride=stride, padding=0)
    else:
        shortcut = x
    return T.gelu(T.add(y, shortcut))


def grid_keypoints(height: int, width: int, stride: int = COARSE_STRIDE) -> np.ndarray:
    """(x, y) centres of the stride x stride grid cells, row-major.

    Cell (r, c) gets x = stride*c + (stride-1)/2, y = stride*r + (stride-1)/2,
    the mean pixel index of the cell. Downstream reprojection metrics depend
    on this exact convention.
    """
    if height % stride or width % stride:
        raise ValueError(f"dims ({height}, {width}) not divisible by stride {stride}")
    half = (stride - 1) / 2.0
    cols = np.arange(width // stride) * stride + half
    rows = np.arange(height // stride) * stride + half
    xs, ys = np.meshgrid(cols, rows)
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)


def extract_features(img: np.ndarray, params: BackboneParams,
                     cfg: BackboneConfig) -> FeaturePyramid:
    """Run the encoder over one grayscale image (H x W array in [0, 1])."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h % COARSE_STRIDE or w % COARSE_STRIDE:
        pad_h = (-h) % COARSE_STRIDE
        pad_w = (-w) % COARSE_STRIDE
        raise ValueError(
            f"image dims ({h}, {w}) must be divisible by {COARSE_STRIDE}; "
            f"pad by ({pad_h}, {pad_w}) first")

    x = T.gelu(instance_norm(T.conv2d(DiffTensor(img[None, :, :]), params.stem.kernel,
                                      params.stem.bias, stride=2, padding=1),
                             params.stem_norm))
    stage_outs = []
    for blocks, stride in zip(params.stages, _STAGE_STRIDES):
        for b, block in enumerate(blocks):
            x = _residual_block(x, block, stride if b == 0 else 1)
        stage_outs.append(x)

    c1, c2, c3 = stage_outs
    coarse = T.conv2d(c3, params.lat3.kernel, params.lat3.bias)
    top = T.upsample2_nearest(T.conv2d(coarse, params.red2.kernel, params.red2.bias))
    p2 = T.conv2d(T.add(T.conv2d(c2, params.lat2.kernel, params.lat2.bias), top),
                  params.smooth2.kernel, params.smooth2.bias, padding=1)
    p1 = T.conv2d(T.add(T.conv2d(c1, params.lat1.kernel, params.lat1.bias),
                        T.upsample2_nearest(p2)),
                  params.smooth1.kernel, params.smooth1.bias, padding=1)

    return FeaturePyramid(coarse=coarse, fine=p1, keypoints=grid_keypoints(h, w))
