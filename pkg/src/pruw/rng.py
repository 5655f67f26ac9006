"""Seeded, independent random streams keyed by (role, index, round...)."""

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def stream(seed: int, *key) -> np.random.Generator:
    """Generator for ``key`` under ``seed``; distinct keys give independent streams."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(_key_part(k) for k in key))
    return np.random.default_rng(ss)
