"""Named random substreams derived from one root seed.

Every consumer (data generation, partitioning, weight init, each client's
episode sampler, evaluation) draws from its own stream, so adding draws in one
place never shifts another.
"""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(root_seed, *names):
    return np.random.SeedSequence(int(root_seed), spawn_key=tuple(_key(n) for n in names))


def rng_for(root_seed, *names):
    return np.random.default_rng(seed_sequence(root_seed, *names))


def int_seed(root_seed, *names):
    """A 32-bit integer seed for APIs that take plain ints."""
    return int(seed_sequence(root_seed, *names).generate_state(1)[0])
