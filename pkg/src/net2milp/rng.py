"""Named, splittable random streams derived from a single integer seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the stream ``name`` under ``seed``.

    Streams with different names are statistically independent, and the
    same (seed, name) pair always yields the same sequence.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))
