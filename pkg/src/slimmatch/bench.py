"""Attention scaling benchmark: analytic MAC counts plus wall time.

Two kinds are measured at each token count: `vector` runs one full
linear-complexity attention layer (attention, FFN, scaled residual) in
self-attention mode, and `vanilla` runs a classic quadratic attention block
(Q/K/V projections, softmax(Q K^T / sqrt(C)) V, output projection) as the
reference. MAC counts come from the flop ledger, so the vector kind must
double exactly with the token count while the vanilla ratio approaches 4.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import TokenSeq, attention_layer, init_attention
from .params import linear_init
from .rng import Xorshift64Star
from .tensor import DiffTensor, FlopLedger, record_flops


@dataclass
class BenchRow:
    kind: str
    tokens: int
    macs: int
    seconds: float


class ComplexityViolation(AssertionError):
    """Raised when measured MAC ratios contradict the claimed complexity."""


def _grid_coords(n: int) -> np.ndarray:
    side = math.isqrt(n - 1) + 1
    idx = np.arange(n)
    return np.stack([idx // side, idx % side], axis=1)


def _tokens(n: int, channels: int, seed: int) -> TokenSeq:
    vals = np.random.default_rng(seed).standard_normal((n, channels))
    return TokenSeq(DiffTensor(vals), _grid_coords(n))


@dataclass
class _VanillaParams:
    w_q: object
    w_k: object
    w_v: object
    w_out: object


def _init_vanilla(channels: int, rng: Xorshift64Star) -> _VanillaParams:
    return _VanillaParams(
        w_q=linear_init(rng, channels, channels, bias=False),
        w_k=linear_init(rng, channels, channels, bias=False),
        w_v=linear_init(rng, channels, channels, bias=False),
        w_out=linear_init(rng, channels, channels, bias=False),
    )


def vanilla_attention(tokens: DiffTensor, p: _VanillaParams) -> DiffTensor:
    """Reference quadratic attention: softmax(Q K^T / sqrt(C)) V, projected."""
    c = tokens.shape[-1]
    q = T.matmul(tokens, p.w_q.weight)
    k = T.matmul(tokens, p.w_k.weight)
    v = T.matmul(tokens, p.w_v.weight)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(c))
    attended = T.matmul(T.softmax_axis(scores, axis=1), v)
    return T.matmul(attended, p.w_out.weight)


def _run_kind(kind: str, n: int, channels: int, seed: int, repeats: int) -> BenchRow:
    rng = Xorshift64Star(seed)
    tok = _tokens(n, channels, seed)
    if kind == "vector":
        params = init_attention(channels, 4, rng)
        run = lambda: attention_layer(tok, tok, params)
    elif kind == "vanilla":
        params = _init_vanilla(channels, rng)
        run = lambda: vanilla_attention(tok.tokens, params)
    else:
        raise ValueError(f"unknown benchmark kind {kind!r}")

    ledger = FlopLedger()
    with record_flops(ledger):
        run()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        run()
        times.append(time.perf_counter() - start)
    return BenchRow(kind=kind, tokens=n, macs=ledger.total(),
                    seconds=float(np.median(times)))


def _check_ratios(rows: list[BenchRow]) -> None:
    by_kind: dict[str, list[BenchRow]] = {}
    for row in rows:
        by_kind.setdefault(row.kind, []).append(row)
    for kind, series in by_kind.items():
        series.sort(key=lambda r: r.tokens)
        ratios = []
        for small, big in zip(series, series[1:]):
            if big.tokens != 2 * small.tokens:
                continue
            ratio = big.macs / small.macs
            ratios.append(ratio)
            if kind == "vector" and big.macs != 2 * small.macs:
                raise ComplexityViolation(
                    f"vector MACs not linear: {small.tokens}->{big.tokens} "
                    f"gives ratio {ratio}")
            if kind == "vanilla" and ratio > 4.0:
                raise ComplexityViolation(
                    f"vanilla MAC ratio {ratio} exceeds the quadratic limit 4")
        if kind == "vanilla" and any(b < a - 1e-12 for a, b in zip(ratios, ratios[1:])):
            raise ComplexityViolation("vanilla MAC ratios must approach 4 from below")


def bench_attention_scaling(token_counts, channels: int = 64,
                            kinds=("vector", "vanilla"), repeats: int = 20,
                            seed: int = 0) -> list[BenchRow]:
    """Measure every kind at every token count and validate the MAC ratios."""
    token_counts = sorted(token_counts)
    rows = [_run_kind(kind, n, channels, seed, repeats)
            for kind in kinds for n in token_counts]
    _check_ratios(rows)
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    lines = ["kind,N,macs,seconds"]
    lines += [f"{r.kind},{r.tokens},{r.macs},{r.seconds:.6f}" for r in rows]
    return "\n".join(lines) + "\n"
