"""Seed derivation.

Every random stream in the package comes from a master seed mixed with a
tuple of integer keys through numpy's ``SeedSequence`` hash, so results do
not depend on the order in which independent work items are executed.
"""

from __future__ import annotations

import numpy as np


def derive_seed(*keys: int) -> int:
    """Mix integer keys into a single 64-bit seed."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream(*keys: int) -> np.random.Generator:
    """Independent generator for the given key tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]))
