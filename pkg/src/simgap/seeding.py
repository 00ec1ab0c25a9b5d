"""Deterministic seed derivation.

All stochastic draws in the pipeline are keyed by a 64-bit seed derived from a
master seed and an integer path (for example ``(r, j, k)`` for replicate k of
cover point r under input j). The derivation hashes the path with SHA-256, so
it is stable across platforms, Python versions, and numpy versions, and two
distinct paths collide with negligible probability.

Deriving the replicate index independently of the state/input pair is what
makes common random numbers possible: the same seed fed to a synthetic
simulator at two different states reuses the same underlying noise draw.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, *path: int) -> int:
    """Derive a uint64 seed from ``master_seed`` and an integer path."""
    h = hashlib.sha256()
    h.update(int(master_seed).to_bytes(16, "little", signed=True))
    for part in path:
        h.update(int(part).to_bytes(16, "little", signed=True))
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(master_seed: int, *path: int) -> np.random.Generator:
    """Generator seeded by :func:`derive_seed` of the same arguments."""
    return np.random.default_rng(derive_seed(master_seed, *path))
