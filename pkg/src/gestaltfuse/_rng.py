"""Seeded random streams.

All randomness goes through :func:`make_rng`: a numpy ``Generator`` driven by
xoshiro256** (from ``randomgen``) seeded through ``numpy.random.SeedSequence(seed)``.
The same integer seed therefore reproduces the same stream on every platform.
"""

import numpy as np
from randomgen import Xoshiro256


def make_rng(seed: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(Xoshiro256(np.random.SeedSequence(int(seed))))
