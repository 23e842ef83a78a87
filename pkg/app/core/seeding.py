# app/core/seeding.py

"""
Counter-based seed derivation and per-path noise streams.

Every random quantity in an experiment comes from a stream identified by
(master_seed, path) or (master_seed, path, step). Streams never share state, so
a path's draws do not depend on how paths are grouped into batches or threads.
"""

from typing import Iterable, Optional

import numpy as np

from app.core.config import get_settings

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def _rotl64(value: int, shift: int) -> int:
    value &= MASK64
    return ((value << shift) | (value >> (64 - shift))) & MASK64


def seed_derive(master_seed: int, stream_id: int) -> int:
    """
    SplitMix64 finalizer applied to master_seed XOR rotl(stream_id, 32),
    offset by the golden-gamma increment. Pure integer arithmetic, so the
    result is identical on every platform.
    """
    z = ((master_seed ^ _rotl64(stream_id, 32)) + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_stream(master_seed: int, *ids: int) -> int:
    """Nested derivation: derive_stream(s, path, step) = seed_derive(seed_derive(s, path), step)."""
    seed = master_seed & MASK64
    for stream_id in ids:
        seed = seed_derive(seed, stream_id)
    return seed


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class BatchNoise:
    """
    Lockstep standard normals for a batch of paths, one generator per row, each
    refilled in blocks of (block_steps, d).
    """

    def __init__(self, generators: Iterable[np.random.Generator], d: int, block_steps: Optional[int] = None):
        self.generators = list(generators)
        self.d = d
        self.block_steps = block_steps or get_settings().NOISE_BLOCK_STEPS
        self._block = np.empty((len(self.generators), 0, d))
        self._pos = 0

    @classmethod
    def from_seeds(cls, seeds: Iterable[int], d: int, block_steps: Optional[int] = None) -> "BatchNoise":
        return cls((make_generator(int(s)) for s in seeds), d, block_steps)

    def next(self) -> np.ndarray:
        if self._pos >= self._block.shape[1]:
            self._block = np.stack([g.standard_normal((self.block_steps, self.d)) for g in self.generators])
            self._pos = 0
        rows = self._block[:, self._pos, :]
        self._pos += 1
        return rows
