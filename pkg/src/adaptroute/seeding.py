"""Seeded generator derivation so every (seed, key...) cell draws an independent stream."""

from __future__ import annotations

import zlib

import numpy as np


def key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode())


def derive_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFF, *map(key_int, keys)]))
