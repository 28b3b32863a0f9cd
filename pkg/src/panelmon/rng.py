"""Deterministic RNG stream derivation.

Every stochastic component draws from a generator derived from
(master_seed, stream tag, index...) so that results are reproducible and
independent of chunking or execution order.
"""

import numpy as np

# fixed stream tags; never reuse a number
STREAM_RESAMPLE = 1
STREAM_CLUSTER = 2
STREAM_SYNTH = 3
STREAM_FIXTURE = 4
STREAM_SPLIT = 5
STREAM_BENCH = 6


def substream(seed, *key):
    """Generator for the (seed, *key) stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))
