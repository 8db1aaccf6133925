"""splitmix64 / xoshiro256++ generators.

Pure-integer implementations so that sequences are reproducible in any
language from the algorithm alone.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state: int):
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic child seed for a sub-stream identified by ``path``."""
    s = seed & MASK64
    for p in path:
        s, out = splitmix64(s ^ ((p * 0xD1B54A32D192ED03) & MASK64))
        s = out
    return s


class Xoshiro256pp:
    """xoshiro256++ 1.0, seeded through splitmix64."""

    def __init__(self, seed: int = 0):
        sm = seed & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s

    @classmethod
    def from_state(cls, state) -> "Xoshiro256pp":
        obj = cls.__new__(cls)
        obj.s = [int(v) & MASK64 for v in state]
        if not any(obj.s):
            raise ValueError("xoshiro256++ state must not be all zero")
        return obj

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in ``[low, high)`` by rejection (no modulo bias)."""
        span = high - low
        if span <= 0:
            raise ValueError("empty integer range")
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            v = self.next_u64()
            if v < limit:
                return low + v % span

    def numpy_generator(self) -> np.random.Generator:
        """Bulk sampler for large arrays, seeded from this stream."""
        return np.random.Generator(np.random.PCG64(self.next_u64()))
