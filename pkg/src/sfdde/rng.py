"""Deterministic stream derivation for parallel Monte Carlo.

Every consumer of randomness gets its own counter-based (Philox) generator,
keyed by ``(master_seed, path, purpose, component)``.  Streams are derived
directly from the key tuple, never by advancing a shared generator, so the
realized noise is independent of thread count and call order.
"""

from __future__ import annotations

import numpy as np

# Purpose codes for substream derivation.  Fixed once; changing them changes
# every seeded result.
BROWNIAN_W = 0
BROWNIAN_B = 1
JUMP_TIMES = 2
JUMP_MARKS = 3
INITIAL_SEGMENT = 4
PROBE = 5


def substream(master_seed: int, path: int = 0, purpose: int = 0,
              component: int = 0) -> np.random.Generator:
    """Independent Philox generator for one (path, purpose, component) slot."""
    ss = np.random.SeedSequence(entropy=master_seed,
                                spawn_key=(path, purpose, component))
    return np.random.Generator(np.random.Philox(ss))
