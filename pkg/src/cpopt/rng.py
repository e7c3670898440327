"""Named, reproducible random streams.

Every consumer of randomness (positions, velocities, shadowing, packet drops,
baselines) draws from its own Philox stream keyed by ``(seed, name, *extra)``,
so adding draws to one stream never perturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, name, *extra)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(_key(name), *map(int, extra)))
    return np.random.Generator(np.random.Philox(ss))


def replication_seed(seed: int, replication: int) -> int:
    """Deterministic 63-bit child seed for one replication of a campaign."""
    words = np.random.SeedSequence(int(seed), spawn_key=(int(replication),)).generate_state(2, np.uint32)
    return int((int(words[0]) << 31) ^ int(words[1]))
