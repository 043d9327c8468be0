"""Deterministic RNG streams keyed by (master seed, purpose, indices)."""
from __future__ import annotations

import numpy as np

# purpose ids; part of the derivation key, so changing one changes every result downstream
INIT = 0
BATCH = 1
INNER = 2
TEST = 3
ADAPT = 4
ROLLOUT = 5
INDIVIDUAL = 6
CHECK = 7


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``keys`` under ``seed``; equal arguments give equal streams."""
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and stream keys must be non-negative integers")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
