"""Labelled random streams.

All randomness is derived from one integer seed plus a path of labels, e.g.
``stream(seed, "attack", "example", 17, "restart", 3)``.  The same path
always gives the same generator, independent of evaluation order, so batch
splitting or threading never changes results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(seed: int, labels: tuple) -> list[int]:
    text = "/".join([str(int(seed)), *map(str, labels)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_key(seed, labels))))


def example_streams(seed: int, prefix: tuple, indices, *suffix) -> list[np.random.Generator]:
    return [stream(seed, *prefix, int(i), *suffix) for i in indices]


def derive_seed(seed: int, *labels) -> int:
    """A 63-bit integer seed for a sub-computation, stable across runs."""
    k = _key(seed, labels)
    return ((k[0] << 32) | k[1]) & ((1 << 63) - 1)
