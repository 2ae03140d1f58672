"""Deterministic, splittable RNG streams.

Every random quantity flows from a single 64-bit seed through counter-based
Philox streams keyed by (seed, component-name, index).  Streams for distinct
components or indices are independent, results are reproducible bit for bit,
and merges stay order-free: Monte Carlo paths are partitioned into fixed
chunks of size ``CHUNK`` and chunk ``i`` always consumes
``stream(seed, component, i)`` no matter how many chunks run or in what
order.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ValidationError

CHUNK = 1 << 14


def stream(seed: int, component: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, component, index)."""
    if not 0 <= int(seed) < 2**64:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    digest = hashlib.blake2b(f"{component}:{index}".encode(), digest_size=8).digest()
    key = np.array([int(seed), int.from_bytes(digest, "little")], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
