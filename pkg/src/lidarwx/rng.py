"""Seed handling.

Every random draw in the package goes through a generator built here from an
explicit integer seed. Philox is counter-based, so a seed fully determines the
stream and no global state is touched.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & SEED_MASK))


def derive_seed(master_seed: int, index: int, tag: str) -> int:
    """Sub-seed = blake2b(master_seed, index, tag) truncated to 64 bits.

    Independent of call order, so per-scene work can be scheduled on any
    number of workers without changing results.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<QQ", int(master_seed) & SEED_MASK, int(index) & SEED_MASK))
    h.update(tag.encode("utf-8"))
    return struct.unpack("<Q", h.digest())[0]
