"""Counter-based random streams keyed by (seed, stream).

Every random draw in the package comes from a Philox generator whose key is the
pair ``(seed, stream)``.  Two generators with the same key produce identical
output no matter which process creates them or in which order, so replica-level
parallelism cannot change results.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

UINT64_MASK = (1 << 64) - 1


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([int(seed) & UINT64_MASK, int(stream) & UINT64_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(master_seed: int, label: str, index: int) -> tuple[int, int]:
    """Hash ``(master_seed, label, index)`` into a per-replica ``(seed, stream)`` pair."""
    h = hashlib.blake2b(digest_size=16, person=b"polymer-lab")
    h.update(struct.pack("<Q", int(master_seed) & UINT64_MASK))
    h.update(label.encode())
    h.update(struct.pack("<Q", int(index) & UINT64_MASK))
    seed, stream = struct.unpack("<QQ", h.digest())
    return seed, stream
