"""Dense float64 tensors with reverse-mode automatic differentiation.

Every numeric stage of the matching pipeline (encoder, attention, matching,
losses) is expressed in terms of the primitives here, so one gradient
implementation and one flop ledger cover the whole system.

Conventions:

* all values are 64-bit floats in row-major (C) order;
* convolution means cross-correlation (no kernel flip);
* max reductions break ties toward the first element in row-major order;
* the flop ledger counts multiply-accumulates only -- additions and
  activations are excluded, which is the usual convention for attention
  complexity comparisons.

Ops are pure functions of immutable inputs. A recorded graph plus the
ledger that was active while recording it belong to a single owner:
``backward`` must not race with forward recording on the same graph.
"""

from __future__ import annotations

import math

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "DiffTensor",
    "FlopLedger",
    "GraphError",
    "ShapeError",
    "record_flops",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "elementwise",
    "gelu",
    "sigmoid",
    "log",
    "pow_const",
    "clamp",
    "softmax_axis",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "max_pool_global",
    "reshape",
    "transpose",
    "concat",
    "conv2d",
    "crop_windows",
    "upsample2_nearest",
    "rotate_pairs",
    "backward",
    "zero_grads",
    "finite_diff_check",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class GraphError(RuntimeError):
    """Raised on misuse of the recorded computation graph."""


class FlopLedger:
    """Multiply-accumulate counters keyed by operation kind.

    Counters only ever grow while a recording session is active; re-running
    the same forward graph adds the same counts again.
    """

    def __init__(self) -> None:
        self.counts: dict[str, int] = {}

    def add(self, kind: str, macs: int) -> None:
        self.counts[kind] = self.counts.get(kind, 0) + int(macs)

    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict[str, int]:
        return dict(self.counts)

    def reset(self) -> None:
        self.counts.clear()

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in sorted(self.counts.items()))
        return f"FlopLedger({inner})"


_ACTIVE_LEDGER: FlopLedger | None = None


class record_flops:
    """Context manager installing `ledger` as the active MAC recorder."""

    def __init__(self, ledger: FlopLedger) -> None:
        self.ledger = ledger
        self._saved: FlopLedger | None = None

    def __enter__(self) -> FlopLedger:
        global _ACTIVE_LEDGER
        self._saved = _ACTIVE_LEDGER
        _ACTIVE_LEDGER = self.ledger
        return self.ledger

    def __exit__(self, *exc) -> None:
        global _ACTIVE_LEDGER
        _ACTIVE_LEDGER = self._saved


def _record(kind: str, macs: int) -> None:
    if _ACTIVE_LEDGER is not None:
        _ACTIVE_LEDGER.add(kind, macs)


class DiffTensor:
    """A dense float64 array with optional gradient tracking.

    ``grad`` is populated (same shape as ``data``) only after a ``backward``
    pass has reached this node; ``None`` means "no gradient yet", which for
    a leaf is equivalent to a zero gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[DiffTensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are promoted to constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: Sequence[DiffTensor],
          backward_fn: Callable[[np.ndarray], None]) -> DiffTensor:
    out = DiffTensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accumulate(t: DiffTensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` over the axes that numpy broadcasting expanded to reach it."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_data(a: DiffTensor, b: DiffTensor, op: str) -> np.ndarray | None:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _broadcast_data(a, b, "add")
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), bwd)


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _broadcast_data(a, b, "sub")
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(data, (a, b), bwd)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Hadamard product with numpy broadcasting; one MAC per output value."""
    _broadcast_data(a, b, "mul")
    data = a.data * b.data
    _record("mul", data.size)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), bwd)


def scale(a: DiffTensor, s: float) -> DiffTensor:
    """Multiply by a fixed python scalar."""
    data = a.data * s
    _record("scale", data.size)

    def bwd(g):
        _accumulate(a, g * s)

    return _node(data, (a,), bwd)


def gelu(x: DiffTensor) -> DiffTensor:
    """Exact (erf-based) GELU, not the tanh approximation."""
    xd = x.data
    phi = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    data = xd * phi

    def bwd(g):
        dens = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        _accumulate(x, g * (phi + xd * dens))

    return _node(data, (x,), bwd)


def sigmoid(x: DiffTensor) -> DiffTensor:
    data = np.empty_like(x.data)
    pos = x.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    data[~pos] = ex / (1.0 + ex)
    # keep the output strictly inside (0, 1) even where float64 saturates
    np.clip(data, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0), out=data)

    def bwd(g):
        _accumulate(x, g * data * (1.0 - data))

    return _node(data, (x,), bwd)


def log(x: DiffTensor) -> DiffTensor:
    data = np.log(x.data)

    def bwd(g):
        _accumulate(x, g / x.data)

    return _node(data, (x,), bwd)


def pow_const(x: DiffTensor, p: float) -> DiffTensor:
    data = np.power(x.data, p)

    def bwd(g):
        _accumulate(x, g * p * np.power(x.data, p - 1.0))

    return _node(data, (x,), bwd)


def clamp(x: DiffTensor, lo: float, hi: float) -> DiffTensor:
    """Clip to [lo, hi]; gradient passes only through the strict interior."""
    data = np.clip(x.data, lo, hi)

    def bwd(g):
        inside = (x.data > lo) & (x.data < hi)
        _accumulate(x, g * inside)

    return _node(data, (x,), bwd)


_ELEMENTWISE_KINDS = ("add", "mul", "gelu", "sigmoid", "scale")


def elementwise(kind: str, *operands) -> DiffTensor:
    """Dispatch by kind; see the individual functions for contracts."""
    if kind == "add":
        return add(*operands)
    if kind == "mul":
        return mul(*operands)
    if kind == "gelu":
        return gelu(*operands)
    if kind == "sigmoid":
        return sigmoid(*operands)
    if kind == "scale":
        return scale(*operands)
    raise ValueError(f"unknown elementwise kind {kind!r}; expected one of {_ELEMENTWISE_KINDS}")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """2-D matrix product; records m*n*k MACs."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    data = a.data @ b.data
    _record("matmul", m * n * k)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _node(data, (a, b), bwd)


def softmax_axis(x: DiffTensor, axis: int) -> DiffTensor:
    """Numerically stable softmax along `axis` (max-subtraction)."""
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError(f"softmax over an empty axis {axis} of shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=axis, keepdims=True)
    # entries whose exponent underflowed get the smallest positive float so
    # the output stays strictly positive; the sum moves by well under 1e-12
    np.maximum(data, np.finfo(np.float64).tiny, out=data)

    def bwd(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(x, data * (g - inner))

    return _node(data, (x,), bwd)


def reduce_sum(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _node(data, (x,), bwd)


def reduce_mean(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    count = x.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_max(x: DiffTensor, axis: int, keepdims: bool = False) -> DiffTensor:
    """Max along one axis; gradient routes to the first (row-major) argmax."""
    data = x.data.max(axis=axis, keepdims=keepdims)
    idx = x.data.argmax(axis=axis)

    def bwd(g):
        if not keepdims:
            g_exp = np.expand_dims(g, axis)
        else:
            g_exp = g
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), g_exp, axis=axis)
        _accumulate(x, gx)

    return _node(data, (x,), bwd)


def max_pool_global(x: DiffTensor) -> DiffTensor:
    """Per-channel global maximum of a C x H x W map, returned as C x 1 x 1."""
    if x.ndim != 3:
        raise ShapeError(f"max_pool_global expects C x H x W, got {x.shape}")
    c = x.shape[0]
    flat = reshape(x, (c, x.shape[1] * x.shape[2]))
    return reshape(reduce_max(flat, axis=1), (c, 1, 1))


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def reshape(x: DiffTensor, shape) -> DiffTensor:
    data = x.data.reshape(shape)

    def bwd(g):
        _accumulate(x, g.reshape(x.shape))

    return _node(data, (x,), bwd)


def transpose(x: DiffTensor, axes: tuple[int, ...] | None = None) -> DiffTensor:
    data = np.transpose(x.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def bwd(g):
        _accumulate(x, np.transpose(g, inv))

    return _node(data, (x,), bwd)


def concat(parts: Sequence[DiffTensor], axis: int) -> DiffTensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, stop)
                _accumulate(p, g[tuple(sl)])

    return _node(data, tuple(parts), bwd)


def upsample2_nearest(x: DiffTensor) -> DiffTensor:
    """Nearest-neighbour 2x upsampling of a C x H x W map."""
    if x.ndim != 3:
        raise ShapeError(f"upsample2_nearest expects C x H x W, got {x.shape}")
    data = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def bwd(g):
        c, h2, w2 = g.shape
        _accumulate(x, g.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4)))

    return _node(data, (x,), bwd)


def crop_windows(x: DiffTensor, centers: np.ndarray, w: int) -> DiffTensor:
    """Crop K odd-sized w x w windows from a C x H x W map, zero-padded at borders.

    `centers` holds integer (row, col) cell coordinates, one per window.
    """
    if w % 2 == 0:
        raise ShapeError(f"window size must be odd, got {w}")
    c, h, ww = x.shape
    centers = np.asarray(centers, dtype=np.int64)
    k = centers.shape[0]
    half = w // 2
    data = np.zeros((k, c, w, w), dtype=np.float64)
    spans = []
    for i, (r0, c0) in enumerate(centers):
        rs, re = r0 - half, r0 + half + 1
        cs, ce = c0 - half, c0 + half + 1
        vrs, vre = max(rs, 0), min(re, h)
        vcs, vce = max(cs, 0), min(ce, ww)
        if vrs < vre and vcs < vce:
            data[i, :, vrs - rs:vre - rs, vcs - cs:vce - cs] = x.data[:, vrs:vre, vcs:vce]
        spans.append((rs, cs, vrs, vre, vcs, vce))

    def bwd(g):
        gx = np.zeros_like(x.data)
        for i, (rs, cs, vrs, vre, vcs, vce) in enumerate(spans):
            if vrs < vre and vcs < vce:
                gx[:, vrs:vre, vcs:vce] += g[i, :, vrs - rs:vre - rs, vcs - cs:vce - cs]
        _accumulate(x, gx)

    return _node(data, (x,), bwd)


def rotate_pairs(x: DiffTensor, cos: np.ndarray, sin: np.ndarray) -> DiffTensor:
    """Rotate consecutive channel pairs (2k, 2k+1) by fixed per-pair angles.

    `cos`/`sin` broadcast against the (..., C/2) even/odd channel views. The
    map is orthogonal, so the backward pass is rotation by the negated angles.
    """
    if x.shape[-1] % 2 != 0:
        raise ShapeError(f"rotate_pairs needs an even channel count, got {x.shape}")
    xe = x.data[..., 0::2]
    xo = x.data[..., 1::2]
    data = np.empty_like(x.data)
    data[..., 0::2] = cos * xe - sin * xo
    data[..., 1::2] = sin * xe + cos * xo
    _record("rope", data.size * 2)

    def bwd(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = cos * ge + sin * go
        gx[..., 1::2] = -sin * ge + cos * go
        _accumulate(x, gx)

    return _node(data, (x,), bwd)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

_CONV_MODES = ("standard", "depthwise", "pointwise")


def conv2d(x: DiffTensor, kernel: DiffTensor, bias: DiffTensor | None = None,
           mode: str = "standard", stride: int = 1, padding: int = 0) -> DiffTensor:
    """Cross-correlation over a C_in x H x W map.

    Kernel shapes: standard (C_out, C_in, k, k); depthwise (C, k, k);
    pointwise (C_out, C_in) acting as a 1x1 mix. Zero padding only. Output
    spatial size is floor((H + 2p - k) / stride) + 1.
    """
    if mode not in _CONV_MODES:
        raise ValueError(f"unknown conv mode {mode!r}")
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects C x H x W input, got {x.shape}")
    cin, h, w = x.shape

    if mode == "pointwise":
        if kernel.ndim != 2 or kernel.shape[1] != cin:
            raise ShapeError(f"pointwise kernel {kernel.shape} does not match input {x.shape}")
        kern4 = reshape(kernel, (kernel.shape[0], cin, 1, 1))
        return conv2d(x, kern4, bias, mode="standard", stride=stride, padding=padding)

    if mode == "standard":
        if kernel.ndim != 4 or kernel.shape[1] != cin or kernel.shape[2] != kernel.shape[3]:
            raise ShapeError(f"standard kernel {kernel.shape} does not match input {x.shape}")
        cout, _, k, _ = kernel.shape
    else:
        if kernel.ndim != 3 or kernel.shape[0] != cin or kernel.shape[1] != kernel.shape[2]:
            raise ShapeError(f"depthwise kernel {kernel.shape} does not match input {x.shape}")
        cout, k = cin, kernel.shape[1]

    hp, wp = h + 2 * padding, w + 2 * padding
    if k > hp or k > wp:
        raise ShapeError(f"kernel size {k} exceeds padded input {hp}x{wp}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    out = np.zeros((cout, ho, wo), dtype=np.float64)
    kd = kernel.data
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
            if mode == "standard":
                out += np.tensordot(kd[:, :, ki, kj], patch, axes=([1], [0]))
            else:
                out += kd[:, ki, kj][:, None, None] * patch
    if bias is not None:
        out += bias.data.reshape(cout, 1, 1)

    if mode == "standard":
        _record("conv2d", cout * cin * k * k * ho * wo)
    else:
        _record("conv2d", cin * k * k * ho * wo)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        gk = np.zeros_like(kd) if kernel.requires_grad else None
        for ki in range(k):
            for kj in range(k):
                patch = xp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
                if mode == "standard":
                    if gk is not None:
                        gk[:, :, ki, kj] += np.tensordot(g, patch, axes=([1, 2], [1, 2]))
                    if x.requires_grad:
                        gxp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += (
                            np.tensordot(kd[:, :, ki, kj].T, g, axes=([1], [0])))
                else:
                    if gk is not None:
                        gk[:, ki, kj] += (g * patch).sum(axis=(1, 2))
                    if x.requires_grad:
                        gxp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += (
                            kd[:, ki, kj][:, None, None] * g)
        if x.requires_grad:
            if padding:
                _accumulate(x, gxp[:, padding:padding + h, padding:padding + w])
            else:
                _accumulate(x, gxp)
        if gk is not None:
            _accumulate(kernel, gk)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(1, 2)).reshape(bias.shape))

    return _node(out, parents, bwd)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(loss: DiffTensor) -> None:
    """Reverse-mode sweep from a scalar loss; fills `.grad` on reached leaves."""
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise GraphError("backward called on a non-finite loss")

    topo: list[DiffTensor] = []
    visited: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def zero_grads(params: Iterable[DiffTensor]) -> None:
    for p in params:
        p.grad = None


def grad_or_zeros(t: DiffTensor) -> np.ndarray:
    """A leaf untouched by backward has an implicit zero gradient."""
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def finite_diff_check(f: Callable[[], DiffTensor], params: Sequence[DiffTensor],
                      step: float = 1e-5,
                      coords: Sequence[tuple[int, int]] | None = None) -> float:
    """Compare backward() gradients of ``f()`` against central differences.

    `coords` lists (param_index, flat_index) pairs to probe; by default every
    coordinate of every parameter is tested. Returns the max over tested
    coordinates of |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    zero_grads(params)
    loss = f()
    if not np.isfinite(loss.data).all():
        raise GraphError("finite_diff_check: f evaluated non-finite")
    loss.backward()
    grads = [grad_or_zeros(p).reshape(-1).copy() for p in params]
    zero_grads(params)

    if coords is None:
        coords = [(pi, i) for pi, p in enumerate(params) for i in range(p.size)]

    worst = 0.0
    for pi, i in coords:
        flat = params[pi].data.reshape(-1)
        saved = flat[i]
        flat[i] = saved + step
        f_plus = float(f().data.reshape(-1)[0])
        flat[i] = saved - step
        f_minus = float(f().data.reshape(-1)[0])
        flat[i] = saved
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise GraphError("finite_diff_check: perturbed f evaluated non-finite")
        g_fd = (f_plus - f_minus) / (2.0 * step)
        g_ad = grads[pi][i]
        err = abs(g_ad - g_fd) / max(1e-12, abs(g_ad) + abs(g_fd))
        worst = max(worst, err)
    return worst
