"""Splittable seeded random streams.

Every consumer derives its own PCG64 stream from ``(seed, *path)`` through
:class:`numpy.random.SeedSequence` spawn keys, so adding a consumer (a branch,
a pose, a tree) never shifts the numbers drawn by another one.
"""

import numpy as np

# reserved spawn-key tags, well above any child/pose index
SURFACE = 2**31 - 1
LEAVES = 2**31 - 2
YAW = 2**31 - 3
NOISE = 2**31 - 4


def stream(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


def fresh_seed() -> int:
    """A non-reproducible seed (wall-clock/OS entropy), for callers that ask for one."""
    return int(np.random.SeedSequence().entropy % (2**63))
