"""Seeded random streams.

Every stochastic routine takes a ``numpy.random.Generator``. Independent
streams for sub-tasks are derived from a root seed plus a tuple of integer
keys, so adding a new consumer never shifts the draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and an optional stream path.

    Keys may be ints or strings; strings are hashed with CRC32 so stream
    names stay stable across interpreter runs (unlike ``hash``).
    """
    if seed is None or int(seed) < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    spawn_key = tuple(
        zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys
    )
    ss = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(ss))
