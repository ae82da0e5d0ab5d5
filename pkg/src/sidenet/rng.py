"""Deterministic random number streams.

All stochastic behaviour in the package flows through Philox, a 64-bit
counter-based generator, so that a single top-level seed reproduces every
initialization, sampling, and augmentation decision bit for bit. Derived
streams are keyed by hashing the parent seed together with string/int
context tokens, which makes parallel or resumed work order-independent:
the stream for (seed, "aug", epoch, clip) is the same no matter who asks
for it or when.
"""

from __future__ import annotations

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash of a byte string (pure Python)."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(seed: int, *context: object) -> int:
    """Stable 64-bit child seed from a parent seed and context tokens."""
    token = ":".join([str(int(seed))] + [str(c) for c in context])
    return fnv1a64(token.encode("utf-8"))


def make_rng(seed: int, *context: object) -> np.random.Generator:
    """Counter-based generator for the given seed and context tokens."""
    key = derive_seed(seed, *context) if context else int(seed) & _MASK64
    return np.random.Generator(np.random.Philox(key=key))
