"""Deterministic seed derivation.

Every random draw in the package is traceable to (master seed, purpose
tags). Tags are hashed with sha256 so derived streams are stable across
platforms and Python processes (the builtin hash() is salted and must not
be used here).
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *tags: object) -> int:
    """Derive a child seed from a master seed and a sequence of tags."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def generator(master: int, *tags: object) -> np.random.Generator:
    """Seeded generator for the stream named by (master, tags)."""
    return np.random.default_rng(derive_seed(master, *tags))
