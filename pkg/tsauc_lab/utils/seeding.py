"""Seed derivation. All RNG streams in the package come from here."""

import numpy as np


def derive_seed(base, *keys):
    """
    Derive a 64-bit seed from a base seed and a path of integer keys

    Args:
        base (int): User-facing seed
        *keys (int): Non-negative integers naming the stream (tree index, run...)

    Returns:
        int: Seed in [0, 2**64)
    """
    words = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    lo, hi = words.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def rng_for(base, *keys):
    """numpy Generator for the stream named by (base, *keys)."""
    return np.random.default_rng(derive_seed(base, *keys))
