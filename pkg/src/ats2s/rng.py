"""Seeded random streams.

One base seed fans out to independent child generators so that turning a
consumer on or off (e.g. dropout) never perturbs the draws seen by the
others. Spawn order is fixed: init, dropout, batching.
"""

import numpy as np


class RngStreams:
    """Named random generators derived from a single seed."""

    def __init__(self, seed):
        root = np.random.SeedSequence(seed)
        children = root.spawn(3)
        self.init = np.random.default_rng(children[0])
        self.dropout = np.random.default_rng(children[1])
        self.batching = np.random.default_rng(children[2])
        self.seed = seed
