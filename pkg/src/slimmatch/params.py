"""Shared parameter containers and deterministic initialisers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Xorshift64Star
from .tensor import DiffTensor


def xavier(rng: Xorshift64Star, shape, fan_in: int, fan_out: int) -> DiffTensor:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return DiffTensor(rng.uniform_array(shape, -limit, limit), requires_grad=True)


def zeros(shape) -> DiffTensor:
    return DiffTensor(np.zeros(shape), requires_grad=True)


@dataclass
class ConvParams:
    """One convolution layer: kernel plus optional bias.

    Convolutions feeding a normalisation layer drop the bias (it would be
    cancelled by the mean subtraction and sit dead in gradient checks).
    """

    kernel: DiffTensor
    bias: DiffTensor | None

    def leaves(self, prefix: str):
        out = [(f"{prefix}.kernel", self.kernel)]
        if self.bias is not None:
            out.append((f"{prefix}.bias", self.bias))
        return out


def conv_init(rng: Xorshift64Star, c_out: int, c_in: int, k: int,
              bias: bool = True) -> ConvParams:
    fan_in, fan_out = c_in * k * k, c_out * k * k
    return ConvParams(xavier(rng, (c_out, c_in, k, k), fan_in, fan_out),
                      zeros(c_out) if bias else None)


def depthwise_init(rng: Xorshift64Star, channels: int, k: int) -> ConvParams:
    fan = k * k
    return ConvParams(xavier(rng, (channels, k, k), fan, fan), zeros(channels))


def pointwise_init(rng: Xorshift64Star, c_out: int, c_in: int) -> ConvParams:
    return ConvParams(xavier(rng, (c_out, c_in), c_in, c_out), zeros(c_out))


@dataclass
class LinearParams:
    """Dense layer y = x @ weight + bias, with weight shaped (in, out)."""

    weight: DiffTensor
    bias: DiffTensor | None

    def leaves(self, prefix: str):
        out = [(f"{prefix}.weight", self.weight)]
        if self.bias is not None:
            out.append((f"{prefix}.bias", self.bias))
        return out


def linear_init(rng: Xorshift64Star, d_in: int, d_out: int, bias: bool = True) -> LinearParams:
    w = xavier(rng, (d_in, d_out), d_in, d_out)
    return LinearParams(w, zeros((1, d_out)) if bias else None)
