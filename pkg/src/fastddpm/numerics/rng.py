"""Seeded, splittable random streams.

Streams are keyed Philox counters, so the output depends only on the seed,
the spawn path and the call sequence, never on the platform or on thread
scheduling. Normal variates use Box-Muller on the stream's uniforms.
"""

from __future__ import annotations

import numpy as np


class RandomSource:
    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, path={self.path})"

    def spawn(self, *keys: int) -> RandomSource:
        """Independent child stream; same (seed, keys) always gives the same child."""
        return RandomSource(self.seed, self.path + tuple(keys))

    def uniform(self, low=0.0, high=1.0, shape=(), dtype=np.float64) -> np.ndarray:
        u = self._gen.random(shape, dtype=np.float64)
        return (low + (high - low) * u).astype(dtype, copy=False)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in ``[low, high)``."""
        return self._gen.integers(low, high, size=shape, dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def gaussian(self, shape, dtype=np.float64) -> np.ndarray:
        return gaussian(self, shape, dtype)


def gaussian(rs: RandomSource, shape, dtype=np.float64) -> np.ndarray:
    """I.i.d. standard normal draws by the Box-Muller transform."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape, dtype=np.int64))
    m = (n + 1) // 2
    u = rs._gen.random((2, m))
    r = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1 - u lies in (0, 1]
    theta = 2.0 * np.pi * u[1]
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape).astype(dtype, copy=False)
