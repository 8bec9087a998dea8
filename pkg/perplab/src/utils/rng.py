"""
Counter-based random streams.

Every block of replicates owns an independent Philox stream derived from
the experiment seed and the block index, so the numbers a replicate sees
depend only on (seed, block, index) and never on the worker count.
"""

import numpy as np
from numpy.random import Generator, Philox, SeedSequence


def block_generator(seed: int, block: int) -> Generator:
    """Generator for block `block` of an experiment seeded with `seed`."""
    return Generator(Philox(SeedSequence(seed, spawn_key=(block,))))


def block_layout(samples: int, block_size: int) -> list[tuple[int, int]]:
    """Split `samples` replicates into (block, size) pairs of at most `block_size`."""
    if samples < 0:
        raise ValueError("samples must be nonnegative")
    n_blocks = -(-samples // block_size)
    return [(b, min(block_size, samples - b * block_size)) for b in range(n_blocks)]


def lineage(seed: int, block: int, size: int) -> np.ndarray:
    """(seed, block, index-in-block) triples for every replicate of a block."""
    out = np.empty((size, 3), dtype=np.int64)
    out[:, 0] = seed
    out[:, 1] = block
    out[:, 2] = np.arange(size)
    return out
