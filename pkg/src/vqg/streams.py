"""Named random sub-streams derived from one run seed.

Each stage draws from its own stream, so extra draws in one stage never shift another.
"""

import zlib

import numpy as np


def substream(seed: int, *names) -> np.random.Generator:
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
