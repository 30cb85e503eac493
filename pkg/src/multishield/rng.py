"""Seeded pseudo-randomness built on the Philox counter-based generator.

Every source of randomness in this package flows through `Rng`. The generator
is numpy's Philox (4x64), which produces identical streams for identical keys
on every platform and numpy version we target. Independent streams are derived
from a (seed, stream-name) pair, so adding a new consumer of randomness never
perturbs existing streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _stream_key(name: str) -> int:
    """Stable 64-bit key for a stream name (first 8 bytes of blake2b)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """A named, seeded random stream.

    Streams with the same (seed, name) are identical across runs and
    platforms; streams with different names are statistically independent.
    """

    def __init__(self, seed: int, name: str = "root"):
        if not (0 <= int(seed) < 2**64):
            raise ValueError("seed must fit in 64 bits")
        self.seed = int(seed)
        self.name = name
        self._gen = np.random.Generator(
            np.random.Philox(key=[self.seed, _stream_key(name)])
        )

    def stream(self, name: str) -> "Rng":
        """Derive an independent stream with the same seed."""
        return Rng(self.seed, f"{self.name}/{name}")

    def for_worker(self, worker_index: int) -> "Rng":
        """Worker-owned stream; seeds derive as seed XOR worker index."""
        return Rng(self.seed ^ worker_index, self.name)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.normal(size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def sample_rng(seed: int, sample_index: int, name: str = "attack") -> Rng:
    """Per-sample stream derived from (global seed, sample index).

    Used by the attack drivers so that serial and parallel evaluation of the
    same samples draw identical noise regardless of worker assignment.
    """
    return Rng(seed, f"{name}/sample-{sample_index}")
