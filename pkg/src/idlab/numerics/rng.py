"""Deterministic randomness with named substreams.

Every source of randomness in the lab is an `Rng`: a counter-based Philox
generator keyed by (seed, stream). Substreams are derived by hashing a tag
into a fresh stream id, so each experiment component (data shuffling, noise
draws, init, ...) replays independently of the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .engine import DEFAULT_DTYPE, Tensor

_MASK64 = (1 << 64) - 1


def _derive_stream(stream: int, tag) -> int:
    h = hashlib.blake2b(f"{stream}/{tag}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Reproducible random source: identical (seed, stream) -> identical draws."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def substream(self, tag) -> "Rng":
        """Fresh independent Rng for a named purpose; derivation is stable."""
        return Rng(self.seed, _derive_stream(self.stream, tag))

    # -- draws (each advances the internal state) ---------------------------

    def normal(self, shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
        return self._gen.standard_normal(size=tuple(shape), dtype=dtype)

    def uniform(self, shape=(), lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return (lo + (hi - lo) * self._gen.random(size=tuple(shape))).astype(np.float64)

    def integers(self, lo: int, hi: int, size=None) -> np.ndarray:
        return self._gen.integers(lo, hi, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=replace)


def gaussian(rng: Rng, shape) -> Tensor:
    """I.i.d. standard normal tensor; deterministic given (seed, stream, call index)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise ValueError(f"gaussian: bad shape {shape}")
    return Tensor(rng.normal(shape))
