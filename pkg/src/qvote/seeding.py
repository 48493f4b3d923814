"""Per-component seed derivation.

Every random draw in a run descends from one master seed. A draw site is named
by a component label plus integer indices (round, agent, ...); the label is
hashed so that adding new components never perturbs existing streams.
"""
from __future__ import annotations

import hashlib

import numpy as np


def label_key(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(master_seed: int, label: str, *indices: int) -> int:
    """Return a 64-bit seed for ``(label, *indices)`` under ``master_seed``."""
    words = [int(master_seed) & 0xFFFFFFFFFFFFFFFF, label_key(label)]
    words.extend(int(i) for i in indices)
    ss = np.random.SeedSequence(words)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(master_seed: int, label: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, label, *indices))
