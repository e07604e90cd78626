"""Seeded PRNG with fully specified constants.

Datasets and parameter initialisations must be reproducible across runs,
platforms, and reimplementations, so instead of relying on any library
generator we pin a 64-bit xorshift-family stream:

* state seeding: one splitmix64 step of the user seed
  (gamma 0x9E3779B97F4A7C15, mixers 0xBF58476D1CE4E5B9, 0x94D049BB133111EB);
* stream: xorshift64* with shift triple (12, 25, 27) and output multiplier
  0x2545F4914F6CDD1D;
* uniform doubles take the top 53 bits of the output word.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MULT = 0x2545F4914F6CDD1D
_TO_DOUBLE = 1.0 / (1 << 53)


def _splitmix64(x: int) -> int:
    z = (x + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


class Xorshift64Star:
    """Deterministic uniform stream; the zero state is remapped to the gamma."""

    def __init__(self, seed: int) -> None:
        self.state = _splitmix64(int(seed) & _MASK)
        if self.state == 0:
            self.state = _GAMMA

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK
        x ^= x >> 27
        self.state = x
        return (x * _MULT) & _MASK

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * _TO_DOUBLE
        return lo + (hi - lo) * u

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape))
        out = np.fromiter((self.uniform(lo, hi) for _ in range(n)), dtype=np.float64, count=n)
        return out.reshape(shape)

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection-free modular reduction."""
        return self.next_u64() % n
