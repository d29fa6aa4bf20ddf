"""Splittable seeding: every consumer derives its own child generator."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def child_seed(seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))


def child_rng(seed: int, *path) -> np.random.Generator:
    """Independent generator for ``path`` under ``seed``; stable across runs."""
    return np.random.default_rng(child_seed(seed, *path))


def child_int(seed: int, *path) -> int:
    return int(child_seed(seed, *path).generate_state(1, np.uint32)[0])
