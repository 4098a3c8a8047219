"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
(seed, purpose) with the stream indices placed in the counter words.  Two
streams with different purposes or indices are independent, and a stream's
output depends only on its key -- never on how many draws other streams have
made or on which thread asked first.  That is what makes results bit-identical
across worker counts.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return the generator for stream (seed, purpose, *indices).

    The key is derived from a SHA-256 digest of ``seed:purpose`` so unrelated
    purposes never collide.  Up to three indices go into counter words 1..3;
    word 0 is left for the generator's own block counter, so a single stream
    can emit 2**64 blocks before touching an index word.
    """
    if len(indices) > 3:
        raise ValueError("at most 3 stream indices are supported")
    digest = hashlib.sha256(f"{seed}:{purpose}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    counter = np.zeros(4, dtype=np.uint64)
    for slot, index in enumerate(indices, start=1):
        if index < 0:
            raise ValueError("stream indices must be nonnegative")
        counter[slot] = np.uint64(index)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def derive(seed: int, tag: str) -> int:
    """Deterministically derive a child seed for an independent sub-experiment."""
    digest = hashlib.sha256(f"{seed}/{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
