"""Stable seed derivation for reproducible, order-independent pipelines.

Every random decision in the toolkit flows from a single master seed.
Child seeds are derived by hashing the master seed together with a label
path (e.g. image index, stage name), so a work item's randomness depends
only on its identity, never on execution order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *parts: object) -> int:
    """Derive a 64-bit child seed from a master seed and a label path.

    BLAKE2b over the text encoding of the inputs; platform independent.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master_seed)).encode())
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "big")


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator with a pinned bit algorithm (PCG64).

    PCG64 is fixed here so that streams are identical across platforms
    for a given numpy version.
    """
    return np.random.Generator(np.random.PCG64(seed))
