"""Linear-complexity vector attention with rotary relative position encoding.

Instead of a quadratic token-token score matrix, each attention pass
summarises the queries into one global vector through softmax importance
weights, modulates the keys with it elementwise, summarises those the same
way, and modulates the values -- so the total multiply count is linear in
the token count. Queries and keys are rotated by position-dependent angles
(RoPE) so dot products depend only on relative grid offsets, and each
residual branch is scaled by a learnable scalar before addition.

Token layouts are (..., T, C): a leading batch axis is optional and is used
by the fine-refinement stage to process all match windows at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .params import LinearParams, linear_init
from .rng import Xorshift64Star
from .tensor import DiffTensor, ShapeError

LAYER_SCALE_INIT = 0.1


@dataclass
class TokenSeq:
    """Token features plus the integer (row, col) grid cell of each token."""

    tokens: DiffTensor
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords)
        if self.coords.shape != (self.tokens.shape[-2], 2):
            raise ShapeError(
                f"coords {self.coords.shape} do not match tokens {self.tokens.shape}")

    @property
    def channels(self) -> int:
        return self.tokens.shape[-1]


class RopeTable:
    """Per-channel-pair rotation frequencies for 2-D rotary encoding.

    Channels split into an x half and a y half; each half of width C' = C/2
    carries C'/2 two-channel rotation blocks with angles theta_k =
    1 / 10000^(2(k-1)/C'), so theta_1 = 1 and theta decreases strictly in k.
    """

    def __init__(self, channels: int) -> None:
        if channels % 4:
            raise ValueError(f"channel count {channels} must be divisible by 4")
        self.channels = channels
        half = channels // 2
        k = np.arange(half // 2, dtype=np.float64)
        self.thetas = 1.0 / np.power(10000.0, 2.0 * k / half)

    def angles(self, coords: np.ndarray) -> np.ndarray:
        """(T, C/2) per-pair angles: x-half pairs first, then y-half pairs."""
        coords = np.asarray(coords, dtype=np.float64)
        x_ang = coords[:, 1:2] * self.thetas[None, :]
        y_ang = coords[:, 0:1] * self.thetas[None, :]
        return np.concatenate([x_ang, y_ang], axis=1)


@lru_cache(maxsize=16)
def rope_table(channels: int) -> RopeTable:
    return RopeTable(channels)


def rope_encode(x: DiffTensor, coords: np.ndarray,
                table: RopeTable | None = None) -> DiffTensor:
    """Rotate token features by their grid position; norm-preserving."""
    table = table or rope_table(x.shape[-1])
    ang = table.angles(coords)
    return T.rotate_pairs(x, np.cos(ang), np.sin(ang))


def sinusoidal_encoding(coords: np.ndarray, channels: int) -> np.ndarray:
    """Fixed absolute sin/cos embedding over the same frequency family.

    Used only by the `absolute` position-encoding ablation, added to token
    features once before the first attention layer.
    """
    table = rope_table(channels)
    ang = table.angles(coords)
    pe = np.empty((coords.shape[0], channels))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang)
    return pe


@dataclass
class AttentionParams:
    """Weights of one attention layer (one role of one depth)."""

    w_q: LinearParams
    w_k: LinearParams
    w_v: LinearParams
    q_imp: LinearParams
    k_imp: LinearParams
    msg: LinearParams
    ffn1: LinearParams
    ffn2: LinearParams
    layer_scale: DiffTensor

    def leaves(self, prefix):
        out = []
        for name in ("w_q", "w_k", "w_v", "q_imp", "k_imp", "msg", "ffn1", "ffn2"):
            out += getattr(self, name).leaves(f"{prefix}.{name}")
        out.append((f"{prefix}.layer_scale", self.layer_scale))
        return out


@dataclass
class LayerRoles:
    """The four per-depth roles: self on each image, then cross both ways."""

    self_a: AttentionParams
    self_b: AttentionParams
    cross_a: AttentionParams
    cross_b: AttentionParams

    def leaves(self, prefix):
        out = []
        for name in ("self_a", "self_b", "cross_a", "cross_b"):
            out += getattr(self, name).leaves(f"{prefix}.{name}")
        return out


def init_attention(channels: int, ffn_scale: int, rng: Xorshift64Star,
                   layer_scale_trainable: bool = True,
                   heads: int = 1) -> AttentionParams:
    if channels % heads:
        raise ValueError(f"channel count {channels} not divisible by {heads} heads")
    hidden = ffn_scale * channels
    xi = DiffTensor(np.array(LAYER_SCALE_INIT if layer_scale_trainable else 1.0),
                    requires_grad=layer_scale_trainable)
    return AttentionParams(
        w_q=linear_init(rng, channels, channels, bias=False),
        w_k=linear_init(rng, channels, channels, bias=False),
        w_v=linear_init(rng, channels, channels, bias=False),
        q_imp=linear_init(rng, channels, heads, bias=False),
        k_imp=linear_init(rng, channels, heads, bias=False),
        msg=linear_init(rng, channels, channels),
        ffn1=linear_init(rng, 2 * channels, hidden),
        ffn2=linear_init(rng, hidden, channels),
        layer_scale=xi,
    )


def init_layer_roles(channels: int, ffn_scale: int, rng: Xorshift64Star,
                     layer_scale_trainable: bool = True,
                     heads: int = 1) -> LayerRoles:
    mk = lambda: init_attention(channels, ffn_scale, rng, layer_scale_trainable, heads)
    return LayerRoles(mk(), mk(), mk(), mk())


def linear(x: DiffTensor, p: LinearParams) -> DiffTensor:
    """Apply a dense layer over the channel (last) axis of any-rank input."""
    d_in, d_out = p.weight.shape
    lead = x.shape[:-1]
    flat = T.reshape(x, (-1, d_in))
    y = T.matmul(flat, p.weight)
    if p.bias is not None:
        y = T.add(y, p.bias)
    return T.reshape(y, lead + (d_out,))


def _importance(x: DiffTensor, proj: LinearParams, channels: int) -> DiffTensor:
    scores = T.scale(linear(x, proj), 1.0 / math.sqrt(channels))
    return T.softmax_axis(scores, axis=-2)


def _weighted_global(weights: DiffTensor, values: DiffTensor) -> DiffTensor:
    """Per-head importance-weighted sum over tokens -> one global row.

    `weights` is (..., T, heads), softmaxed over T; each head summarises its
    channel slice, so a single head reduces to the plain weighted sum.
    """
    heads = weights.shape[-1]
    lead = values.shape[:-2]
    t, c = values.shape[-2:]
    if heads == 1:
        return T.reduce_sum(T.mul(weights, values), axis=-2, keepdims=True)
    split = T.reshape(values, lead + (t, heads, c // heads))
    w = T.reshape(weights, lead + (t, heads, 1))
    summed = T.reduce_sum(T.mul(w, split), axis=-3, keepdims=True)
    return T.reshape(summed, lead + (1, c))


def vector_attention(u: TokenSeq, r: TokenSeq, p: AttentionParams,
                     use_rope: bool = True) -> DiffTensor:
    """Global message for each token of `u`, attending to `r`.

    Sequence lengths must agree (self attention and same-grid cross
    attention), or `r` may hold a single token, in which case its global
    message broadcasts over the queries.
    """
    c = u.channels
    if r.channels != c:
        raise ShapeError(f"channel mismatch: {u.tokens.shape} vs {r.tokens.shape}")
    t_u = u.tokens.shape[-2]
    t_r = r.tokens.shape[-2]
    if t_r not in (t_u, 1):
        raise ShapeError(f"token counts {t_u} and {t_r} are not alignable")

    q = linear(u.tokens, p.w_q)
    k = linear(r.tokens, p.w_k)
    v = linear(r.tokens, p.w_v)
    if use_rope:
        table = rope_table(c)
        q = rope_encode(q, u.coords, table)
        k = rope_encode(k, r.coords, table)

    q_w = _importance(q, p.q_imp, c)
    q_global = _weighted_global(q_w, q)
    k_ctx = T.mul(q_global, k)
    k_w = _importance(k_ctx, p.k_imp, c)
    k_global = _weighted_global(k_w, k_ctx)
    modulated = T.mul(k_global, v)
    return T.add(linear(modulated, p.msg), q)


def feed_forward(u_tokens: DiffTensor, message: DiffTensor,
                 p: AttentionParams) -> DiffTensor:
    """Concatenate tokens with their message and mix through the wide MLP."""
    if u_tokens.shape != message.shape:
        raise ShapeError(f"shape mismatch: {u_tokens.shape} vs {message.shape}")
    hidden = T.gelu(linear(T.concat([u_tokens, message], axis=-1), p.ffn1))
    return linear(hidden, p.ffn2)


def attention_layer(u: TokenSeq, r: TokenSeq, p: AttentionParams,
                    use_rope: bool = True) -> TokenSeq:
    """One full layer: tokens + layer_scale * FFN(tokens, attention message)."""
    message = vector_attention(u, r, p, use_rope=use_rope)
    branch = feed_forward(u.tokens, message, p)
    out = T.add(u.tokens, T.mul(p.layer_scale, branch))
    return TokenSeq(out, u.coords)


def interleave(a: TokenSeq, b: TokenSeq, layers: list[LayerRoles],
               use_rope: bool = True) -> tuple[TokenSeq, TokenSeq]:
    """Run the self/self/cross/cross update for each depth, in order.

    The second cross update attends to the already-updated first image, so
    the four roles of one depth are sequentially dependent.
    """
    if not layers:
        raise ValueError("interleave needs at least one layer")
    for roles in layers:
        a = attention_layer(a, a, roles.self_a, use_rope)
        b = attention_layer(b, b, roles.self_b, use_rope)
        a_cross = attention_layer(a, b, roles.cross_a, use_rope)
        b_cross = attention_layer(b, a_cross, roles.cross_b, use_rope)
        a, b = a_cross, b_cross
    return a, b
