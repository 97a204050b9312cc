"""Seeded, splittable random streams.

Every random choice in the package flows through ``make_rng``.  Streams are
PCG64 generators keyed by ``(seed, *tags)`` through ``numpy.random.SeedSequence``,
so any component (split sampling, negative sampling, prompt init, ...) can be
replayed in isolation and parallel workers never share a stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    return zlib.crc32(tag.encode("utf-8"))


def make_rng(seed: int, *tags: int | str) -> np.random.Generator:
    """Return a PCG64 generator for the stream identified by (seed, *tags)."""
    key = (int(seed),) + tuple(_tag_to_int(t) for t in tags)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
