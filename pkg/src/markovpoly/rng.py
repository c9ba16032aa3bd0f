"""Reproducible random streams.

Every stream is derived from one 64-bit master seed, a text label naming
the consumer (``"trace"``, ``"grad"``, ...) and an integer index.  The
triple is fed to :class:`numpy.random.SeedSequence` as
``entropy=seed, spawn_key=(crc32(label), index)``, so distinct labels or
indices give statistically independent streams and the same triple always
gives the same stream.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "as_generator"]


def substream(seed: int, label: str = "main", index: int = 0) -> np.random.Generator:
    key = zlib.crc32(label.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(key, int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return substream(int(rng))
