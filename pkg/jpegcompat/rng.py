"""
Seeded random streams.

Every random draw in the package comes from a numpy ``Generator`` keyed by
the run seed plus a spawn key naming the purpose and the work item (block
index, image index, payload index...). Streams therefore never depend on
how work is scheduled, so serial and parallel runs agree bit for bit.
"""

from typing import Union

import numpy as np

SeedLike = Union[int, np.random.Generator]

# Stream purposes, the first element of every spawn key.
MODIFY = 1
COVER = 2
OUTCOME = 3
COUNTS = 4
SELECT = 5
PMAP = 6
VARIANCE = 7


def generator(seed: int, *key: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(int(part) for part in key))
    return np.random.Generator(np.random.PCG64(sequence))


def as_generator(seed: SeedLike, *key: int) -> np.random.Generator:
    """
    Accepts an integer seed (keyed by ``key``) or an existing generator.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return generator(int(seed), *key)
