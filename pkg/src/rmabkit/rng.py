"""Seeded random-stream discipline.

All randomness in the toolkit flows from a single 64-bit root seed.  Child
streams are derived as ``hash(seed, purpose-tag, index)`` so that every
consumer (trial i, sampling phase, tie-breaking, ...) owns an independent,
reproducible generator.  The splitting discipline is part of the public
contract; the generator family (PCG64) is an implementation choice.
"""

from __future__ import annotations

import hashlib

import numpy as np


def tag_entropy(tag: str) -> int:
    """Stable 64-bit integer derived from a purpose tag."""
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def child_seed_sequence(seed: int, tag: str, index: int = 0) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError("seed must be a nonnegative integer")
    if index < 0:
        raise ValueError("index must be a nonnegative integer")
    return np.random.SeedSequence([int(seed), tag_entropy(tag), int(index)])


def child_rng(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, tag, index)."""
    return np.random.Generator(np.random.PCG64(child_seed_sequence(seed, tag, index)))
