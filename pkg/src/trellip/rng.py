"""Seeded, counter-based random streams.

Every chain owns one Philox stream keyed by a 64-bit seed.  Independent
child seeds for parallel chains come from ``numpy.random.SeedSequence``.
"""

import secrets

import numpy as np

DEFAULT_SEED = 20220218


def stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def child_seeds(seed: int, k: int) -> list:
    """k distinct 64-bit seeds derived deterministically from ``seed``."""
    kids = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).spawn(k)
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in kids]


def random_seed() -> int:
    return secrets.randbits(63)
