"""Deterministic seed derivation.

All random streams in the package derive from one master seed through
``derive_seed(master, stream, index)``.  The derivation hashes the triple
with SHA-256, so streams are independent, reproducible across platforms,
and insensitive to the order in which they are created.
"""

import hashlib

import numpy as np


def derive_seed(master: int, stream: str, index: int = 0) -> int:
    """Derive a 128-bit child seed from (master, stream, index)."""
    payload = f"{master}:{stream}:{index}".encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:16], "big")


def derive_rng(master: int, stream: str, index: int = 0) -> np.random.Generator:
    """A fresh PCG64 generator for the derived seed."""
    return np.random.default_rng(derive_seed(master, stream, index))
