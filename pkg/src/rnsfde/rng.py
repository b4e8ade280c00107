"""Deterministic random-stream construction.

Streams are counter-based (Philox) and keyed by (master seed, path index,
purpose tag), so any path/purpose combination can be regenerated in isolation
and results do not depend on scheduling or thread count.
"""

import hashlib

import numpy as np

__all__ = ["stream", "purpose_id"]


def purpose_id(purpose: str) -> int:
    """Stable 64-bit id for a purpose tag (never Python's salted hash)."""
    return int.from_bytes(hashlib.sha256(purpose.encode("utf-8")).digest()[:8], "little")


def stream(seed: int, path: int = 0, purpose: str = "") -> np.random.Generator:
    """Return the Generator keyed by (seed, path, purpose)."""
    if seed < 0:
        raise ValueError("seed must be a nonnegative integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path), purpose_id(purpose)))
    return np.random.Generator(np.random.Philox(ss))
