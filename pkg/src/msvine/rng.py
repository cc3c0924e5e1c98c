"""Seeded random streams.

Every stochastic routine draws from a Philox (counter-based) generator keyed
by the user seed plus a tuple of integers naming the stream, so independent
pieces of work (replicates, chains, windows) get reproducible, non-overlapping
streams regardless of execution order.
"""
import numpy as np


def make_rng(seed=None, *keys: int) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    seq = np.random.SeedSequence(0 if seed is None else int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))
