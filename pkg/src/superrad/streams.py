"""Reproducible random streams.

Every stochastic draw in the package comes from a Philox generator whose
128-bit key packs the master seed, a purpose tag and a work-unit index.
Philox is counter based, so streams with different keys are independent
and each one has a period far beyond anything a trajectory consumes.
"""

from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    """Tags that keep the streams of one trajectory apart."""

    GENERIC = 0
    DISORDER = 1
    SPINS = 2
    NOISE = 3
    CAVITY = 4
    JUMPS = 5
    FREQUENCY = 6
    BOUNDS = 7


_MASK64 = (1 << 64) - 1
_MAX_INDEX = 1 << 48


def seed_stream(master_seed: int, trajectory_index: int,
                purpose: int = Purpose.GENERIC) -> np.random.Generator:
    """Return the generator owned by ``(master_seed, trajectory_index, purpose)``."""
    if not 0 <= trajectory_index < _MAX_INDEX:
        raise ValueError(f"trajectory_index out of range: {trajectory_index}")
    if not 0 <= int(purpose) < (1 << 16):
        raise ValueError(f"purpose out of range: {purpose}")
    key = ((int(master_seed) & _MASK64) << 64) | (int(purpose) << 48) | int(trajectory_index)
    return np.random.Generator(np.random.Philox(key=key))
