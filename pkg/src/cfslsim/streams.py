"""Keyed random streams.

Every stochastic choice in a run draws from its own generator, keyed by the
run seed plus integer domain tags. Two runs with the same config and seed
therefore replay bit-identical draws no matter how the call order shifts
between code paths.
"""

from __future__ import annotations

import numpy as np

# Domain tags. Never renumber: checkpointed runs rely on stable streams.
DATA = 1
SPLIT_TEST = 2
SPLIT_LABEL = 3
CLASS_MEANS = 4
INIT = 5
BATCH = 6
HARDWARE = 7
SELECTION = 8
CHANNEL = 9


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for (seed, key). Same arguments, same draws."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in key]])
    return np.random.Generator(np.random.PCG64(ss))
