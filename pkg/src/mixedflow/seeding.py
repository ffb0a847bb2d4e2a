"""Deterministic, thread-schedule-independent RNG streams.

Every consumer derives its own generator from a root seed plus a tuple of
string/int keys, so the same (seed, purpose, index) always yields the same
stream no matter how work is ordered or parallelized.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator for the stream identified by (seed, *keys)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
