"""Deterministic seed derivation.

Every source of randomness derives a private generator from the master
seed plus a stage tag and, where work is per-node, the node identity.
Parallel or re-ordered execution therefore cannot change results.
"""

from __future__ import annotations

import numpy as np

# Stage tags keep independent stages on independent streams.
STAGE_SYNTH = 1
STAGE_SPLIT = 2
STAGE_FEATURES = 3
STAGE_SAMPLING = 4
STAGE_WALK = 5
STAGE_TRAIN = 6
STAGE_EVAL = 7


def sub_seed(master: int, *path: int) -> np.random.SeedSequence:
    """Seed sequence for (master, path...); path entries must be >= 0."""
    return np.random.SeedSequence([int(master), *[int(p) for p in path]])


def sub_rng(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(sub_seed(master, *path))
