"""Reproducible random streams.

Every Monte Carlo call draws from its own ``numpy.random.Generator`` backed by
PCG64.  Per-record seeds come from SHA-256 over the master seed and record
keys, so they do not depend on record order or on Python's salted ``hash``.
"""

import hashlib

import numpy as np

BIT_GENERATOR = "PCG64"


def derive_seed(master_seed: int, *keys) -> int:
    payload = "\x1f".join([str(int(master_seed))] + [str(k) for k in keys]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = [int(k) for k in seed] if isinstance(seed, (tuple, list)) else int(seed)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
