"""SplitMix64 pseudo-random generator.

Every random draw in the package (synthetic data, parameter init, batch
shuffling) goes through this generator so that results are reproducible
bit-for-bit from the seed alone, independent of numpy's global state.

Constants (Steele, Lea & Flood, 2014):

    state  <- state + 0x9E3779B97F4A7C15
    z      <- state
    z      <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z      <- (z ^ (z >> 27)) * 0x94D049BB133111EB
    output <- z ^ (z >> 31)

All arithmetic is modulo 2**64.  Floats in [0, 1) take the top 53 bits:
``(u >> 11) * 2**-53``.  Normals use Box-Muller with two uniforms per
draw (the sine branch is discarded).
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

_GAMMA_U = np.uint64(GAMMA)
_MIX1_U = np.uint64(MIX1)
_MIX2_U = np.uint64(MIX2)


def mix64(z: int) -> int:
    """SplitMix64 output finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1_U
    z = (z ^ (z >> np.uint64(27))) * _MIX2_U
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based 64-bit generator; the vectorized draws match the scalar ones."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    @classmethod
    def derive(cls, seed: int, *keys: int) -> "SplitMix64":
        """Independent stream keyed on ``seed`` and a tuple of integer keys."""
        s = int(seed) & MASK64
        for key in keys:
            s = mix64(s ^ mix64((int(key) + GAMMA) & MASK64))
        return cls(s)

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64_array(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * _GAMMA_U
        self.state = (self.state + n * GAMMA) & MASK64
        return _mix64_array(states)

    def random(self, size=None):
        """Uniform floats in [0, 1)."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0**-53
        n = int(np.prod(size))
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(size)

    def uniform(self, low: float, high: float, size=None):
        return low + (high - low) * self.random(size)

    def normal(self, size=None, std: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = self.random(2 * n)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2) * std
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.random() * n), n - 1)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            order[i], order[j] = order[j], order[i]
        return order
