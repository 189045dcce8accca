"""Deterministic random streams keyed by (seed, purpose, replication)."""

import zlib

import numpy as np


def derive_rng(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator for one stochastic step.

    The stream depends only on ``seed``, the purpose tag and the integer
    keys, so adding a new consumer never shifts the draws of another.
    """
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, tag, *[int(k) for k in keys]]))
