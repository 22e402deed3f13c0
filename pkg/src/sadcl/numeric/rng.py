"""Seeded random streams.

The bit generator is NumPy's PCG64 seeded directly with the 64-bit seed.
Uniform draws are ``Generator.random`` doubles in [0, 1). Normal draws use the
Box-Muller cosine branch on consecutive uniform pairs::

    z = sqrt(-2 * log(1 - u1)) * cos(2 * pi * u2)

so any implementation with the same uniform stream reproduces them exactly.
"""

from __future__ import annotations

import numpy as np


class RngState:
    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        u = self._gen.random(size)
        if low == 0.0 and high == 1.0:
            return u
        return low + (high - low) * u

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = self._gen.random(2 * n)
        u1, u2 = u[0::2], u[1::2]
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        z = mean + std * z
        return float(z[0]) if size is None else z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        # stable argsort of uniform keys: ties are impossible in practice and
        # broken by index otherwise
        return np.argsort(self._gen.random(n), kind="stable")

    def child(self, *key: int) -> "RngState":
        """Independent stream derived from this seed and an integer key path."""
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))
        return RngState(int(ss.generate_state(1, np.uint64)[0]))

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def seeded_rng(seed: int) -> RngState:
    return RngState(seed)
