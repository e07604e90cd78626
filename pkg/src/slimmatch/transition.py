"""Multi-scale feature transition between the CNN encoder and attention.

Four parallel branches -- depthwise convolutions of kernel size 1, 3, 5, 7,
each followed by a 1x1 pointwise squeeze to a quarter of the channels --
are concatenated back to the full width. This widens the receptive field of
the locally aggregated CNN features before global attention sees them.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .params import ConvParams, depthwise_init, pointwise_init
from .rng import Xorshift64Star
from .tensor import DiffTensor

BRANCH_KERNELS = (1, 3, 5, 7)


@dataclass
class TransitionParams:
    """Depthwise + pointwise weights for the four branches, in kernel order."""

    depthwise: list[ConvParams]
    pointwise: list[ConvParams]

    def leaves(self, prefix="transition"):
        out = []
        for k, dw, pw in zip(BRANCH_KERNELS, self.depthwise, self.pointwise):
            out += dw.leaves(f"{prefix}.dw{k}")
            out += pw.leaves(f"{prefix}.pw{k}")
        return out


def init_transition(channels: int, rng: Xorshift64Star) -> TransitionParams:
    if channels % 4:
        raise ValueError(f"channel count {channels} must be divisible by 4")
    quarter = channels // 4
    return TransitionParams(
        depthwise=[depthwise_init(rng, channels, k) for k in BRANCH_KERNELS],
        pointwise=[pointwise_init(rng, quarter, channels) for _ in BRANCH_KERNELS],
    )


def feature_transition(coarse: DiffTensor, p: TransitionParams) -> DiffTensor:
    """Apply the four branches and concatenate; spatial size is preserved."""
    channels, h, w = coarse.shape
    if channels % 4:
        raise ValueError(f"channel count {channels} must be divisible by 4")
    if min(h, w) < 4:
        raise ValueError(f"spatial dims ({h}, {w}) too small for the 7x7 branch")
    branches = []
    for k, dw, pw in zip(BRANCH_KERNELS, p.depthwise, p.pointwise):
        y = T.conv2d(coarse, dw.kernel, dw.bias, mode="depthwise", padding=(k - 1) // 2)
        branches.append(T.conv2d(y, pw.kernel, pw.bias, mode="pointwise"))
    return T.concat(branches, axis=0)
