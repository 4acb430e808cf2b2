"""Seeded random streams.

Every stochastic step draws from ``numpy.random.default_rng([seed, *path])``,
so a stream depends only on the master seed and its position in the run
(sample index, worker, epoch), never on scheduling.
"""

import numpy as np


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(p) for p in path)])


def spawn_seed(rng: np.random.Generator) -> int:
    """Draw a child seed from an existing stream."""
    return int(rng.integers(0, 2**31 - 1))
