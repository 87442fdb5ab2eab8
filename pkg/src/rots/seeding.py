"""Named random streams derived from a single root seed.

Every consumer asks for its own stream by name, so adding a new consumer (or
running consumers in a different order) never shifts the draws seen by the
others.
"""

import zlib

import numpy as np


def stream(seed, name):
    """Return a Generator for substream ``name`` of root ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


class Streams:
    def __init__(self, seed):
        self.seed = int(seed)

    def __call__(self, name):
        return stream(self.seed, name)
