"""Seeded random streams.

Every random draw in the package goes through a Philox counter-based
generator built from a root seed. Independent tasks (one per regime, one per
grid point, one per Monte Carlo batch) get child streams spawned from the
same ``SeedSequence`` so results do not depend on execution order.
"""

from __future__ import annotations

import os

import numpy as np

SEED_ENV_VAR = "DDP_SEED"


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def spawn(seed: int, count: int) -> list[np.random.Generator]:
    """Return ``count`` independent generators derived from ``seed``."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [make_rng(child) for child in children]


def resolve_seed(seed: int | None, default: int = 0) -> int:
    """Explicit seed wins, then ``$DDP_SEED``, then ``default``."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None and env.strip():
        return int(env)
    return default
