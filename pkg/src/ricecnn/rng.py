"""Deterministic random streams with named substreams.

Every source of randomness in the package (weight init, shuffling, dropout
masks, augmentation plans) draws from an RngState. Substreams are derived by
hashing (seed, label), so a substream is identified by its label alone and is
independent of how many draws other streams have consumed. Re-deriving the
same label always restarts the same stream, which is what makes weight
initialization reproducible layer by layer.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


class RngState:
    """A seeded PCG64 stream plus a way to fork named child streams."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, label: str) -> "RngState":
        """Fork a child stream keyed by (seed, label).

        Does not consume any draws from this stream; calling derive with the
        same label twice returns identical streams.
        """
        h = hashlib.sha256(self.seed.to_bytes(8, "little") + label.encode("utf-8"))
        return RngState(int.from_bytes(h.digest()[:8], "little"))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed})"
