from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """
    SplitMix64 stream, vectorized.

    The k-th output (k >= 1) is mix(seed + k * GAMMA) mod 2^64, so a block of n
    draws is computed in one shot and matches the scalar recurrence exactly.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_uint64(self, n: int) -> np.ndarray:
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * _GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(_GAMMA)) & _MASK64
        return out

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Doubles in [low, high) from the top 53 bits of each draw."""
        n = int(np.prod(shape)) if shape else 1
        bits = self.next_uint64(n) >> np.uint64(11)
        u = bits.astype(np.float64) * (1.0 / (1 << 53))
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        """Standard normals via Box-Muller; each pair of uniforms yields a cos and a sin draw."""
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self.uniform((pairs, 2))
        u1 = 1.0 - u[:, 0]  # (0, 1]
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1).reshape(-1)
        return z[:n].reshape(shape)


def derive_seed(seed: int, tag: int) -> int:
    """Independent child seed for a named sub-stream."""
    return int(SplitMix64(seed ^ ((tag * 0xD1B54A32D192ED03) & _MASK64)).next_uint64(1)[0])


def uniform_fan_in(rng: SplitMix64, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)
