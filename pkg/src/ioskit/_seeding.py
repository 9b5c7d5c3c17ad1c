"""Deterministic seeding helpers shared across modules.

Python's builtin hash() is salted per process, so every derived seed goes
through blake2b instead. Selection-without-replacement is pinned to a
partial Fisher-Yates so the draw order is part of the contract.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash64(*parts: object) -> int:
    """Collapse a tuple of parts into a stable unsigned 64-bit seed.

    Parts are rendered via str() and joined with a 0x1f separator, so
    ("a", 12) and ("a1", 2) hash differently.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def fisher_yates_select(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw k distinct indices from range(n) in draw order.

    Partial Fisher-Yates over an index array: step i swaps position i with a
    uniformly chosen position in [i, n). Requires k <= n.
    """
    if k > n:
        raise ValueError(f"cannot draw {k} distinct indices from {n}")
    idx = np.arange(n, dtype=np.int64)
    for i in range(k):
        j = i + int(rng.integers(0, n - i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k]
