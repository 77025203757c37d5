"""Seedable counter-based random streams (Philox)."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    """A Philox stream keyed by ``(seed, stream)``.

    Streams with different keys are independent; a given key always yields
    the same sequence regardless of platform or thread count.
    """

    def __init__(self, seed: int = 0, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def child(self, stream: int) -> "Rng":
        return Rng(self.seed, (self.stream * 1_000_003 + int(stream) + 1) & _MASK64)

    def uniform(self, low, high, size, dtype=np.float64) -> np.ndarray:
        return self._gen.uniform(low, high, size).astype(dtype)

    def normal(self, size, scale=1.0, dtype=np.float64) -> np.ndarray:
        return (self._gen.standard_normal(size) * scale).astype(dtype)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size)

    def random(self) -> float:
        return float(self._gen.random())
