"""Deterministic seed derivation."""

import hashlib
from typing import Union

import numpy as np

SeedPart = Union[int, str]


def hash64(master_seed: int, *parts: SeedPart) -> int:
    """Derive a 64-bit seed from the master seed and a component path.

    seed_i = hash64(master_seed, component_name, index). The digest is a
    blake2b-64 of the decimal/utf-8 parts joined by NUL bytes, so results do
    not depend on worker scheduling or on Python's hash randomization.
    """
    hasher = hashlib.blake2b(digest_size=8)
    hasher.update(str(int(master_seed)).encode("ascii"))
    for part in parts:
        hasher.update(b"\x00")
        hasher.update(str(part).encode("utf-8"))
    return int.from_bytes(hasher.digest(), "little")


def derive_rng(master_seed: int, *parts: SeedPart) -> np.random.Generator:
    """Return a numpy Generator seeded with hash64(master_seed, *parts)."""
    return np.random.default_rng(hash64(master_seed, *parts))
