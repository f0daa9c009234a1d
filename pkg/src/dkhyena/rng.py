"""Deterministic 64-bit pseudo-random stream.

The generator is an xorshift64* stream whose state is initialized by running
the seed through two rounds of splitmix64, so that nearby seeds (0, 1, 2, ...)
produce unrelated streams. All data synthesis, parameter initialization, and
epoch shuffling in this package draw from this stream, which makes every
artifact a pure function of its seed: same seed, byte-identical output, on any
platform with IEEE-754 doubles.

Stream definition (all arithmetic mod 2^64):

    init:  s = splitmix64(splitmix64(seed))
    step:  s ^= s >> 12;  s ^= s << 25;  s ^= s >> 27
           output = s * 0x2545F4914F6CDD1D

    splitmix64(z): z += 0x9E3779B97F4A7C15
                   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
                   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
                   return z ^ (z >> 31)

Uniform doubles take the top 53 bits of an output word; normals use the
Box-Muller transform on two uniforms (second value cached). Child seeds for
shards or per-run derivation mix (seed, index) through splitmix64, see
``child_seed``.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_STAR = 0x2545F4914F6CDD1D


def splitmix64(z: int) -> int:
    """One splitmix64 scramble of a 64-bit word."""
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def child_seed(seed: int, index: int) -> int:
    """Derive an independent child seed from (seed, index).

    Used for per-shard data generation and per-run seed derivation; documented
    mixing so that parallel shards reproduce the sequential result.
    """
    return splitmix64(splitmix64(seed & _MASK) ^ splitmix64((index & _MASK) ^ _GOLDEN))


class Rng:
    """xorshift64* stream, splitmix64-seeded. See module docstring."""

    def __init__(self, seed: int):
        s = splitmix64(splitmix64(seed & _MASK))
        self._s = s if s != 0 else _GOLDEN
        self._cached_normal: float | None = None

    def next_u64(self) -> int:
        s = self._s
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK
        s ^= s >> 27
        self._s = s
        return (s * _STAR) & _MASK

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n). Multiply-shift, bias < 2^-53 for desk-scale n."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        return (self.next_u64() * n) >> 64

    def sign(self) -> int:
        """Uniform ±1."""
        return 1 if self.next_u64() & 1 else -1

    def normal(self) -> float:
        """Standard normal via Box-Muller (second value cached)."""
        if self._cached_normal is not None:
            z = self._cached_normal
            self._cached_normal = None
            return z
        # uniform() can return 0.0; shift into (0, 1] for the log.
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._cached_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normal_array(self, shape, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.normal()
        if std != 1.0:
            out *= std
        return out.reshape(shape)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx
