"""Platform-stable 64-bit hashing.

Python's builtin hash() is salted per process, so everything that must be
reproducible across runs and machines goes through these helpers instead:
blake2b for strings, a splitmix64-style finalizer for vectorized integer
mixing in numpy.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = np.uint64


def hash_word(word: str) -> int:
    """Stable 64-bit hash of a unicode string (UTF-8, blake2b)."""
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise over uint64.

    Input is promoted to a 1-d-or-higher uint64 array: numpy lets array
    arithmetic wrap silently but warns on 0-d/scalar overflow.
    """
    z = np.atleast_1d(np.asarray(x, dtype=_U64))
    z = z + _U64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))
