"""Deterministic seed derivation.

Every run consumes one root seed; components split it with `derive_seed` so
that reordering or parallelizing work never changes the stream any single
component sees.  Hashes are SHA-256 based and stable across processes and
platforms (unlike the builtin `hash`).
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(root: int, *parts: str | int) -> int:
    """Stable 63-bit seed derived from a root seed and a component path."""
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for p in parts:
        h.update(b"|")
        h.update(str(p).encode())
    return int.from_bytes(h.digest()[:8], "little") & _MASK63


def derive_rng(root: int, *parts: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *parts))


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
