"""Reproducible splittable random streams.

Every sampler in the package takes a ``numpy.random.Generator``. Experiments
derive one independent Philox stream per unit of work (replica, alpha, pool)
from a 64-bit seed plus a structured spawn key, so results are bit-identical
for a given seed regardless of thread count or scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "spawn_key"]


def spawn_key(*parts) -> tuple[int, ...]:
    """Map a mixed tuple of ints/strings to a SeedSequence spawn key."""
    key = []
    for part in parts:
        if isinstance(part, (int, np.integer)):
            key.append(int(part) & 0xFFFFFFFF)
        else:
            digest = hashlib.sha256(str(part).encode()).digest()
            key.append(int.from_bytes(digest[:4], "little"))
    return tuple(key)


def stream(seed: int, *parts) -> np.random.Generator:
    """Independent Generator keyed by (seed, *parts)."""
    ss = np.random.SeedSequence(seed, spawn_key=spawn_key(*parts))
    return np.random.Generator(np.random.Philox(ss))
