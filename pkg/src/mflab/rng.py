"""Deterministic stream derivation for reproducible (parallel-safe) simulation.

Every random draw in the package comes from a stream derived from an integer
root seed plus an integer path, e.g. ``substream(seed, step)`` for the noise
injected at one MFLA step, or ``substream(seed, cell, trial)`` for one sweep
cell.  Streams are backed by the counter-based Philox generator, so the same
(seed, path) always yields the same sequence regardless of what other streams
were consumed before it.  Sequential and parallel execution therefore draw
identical noise.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator keyed by (seed, path...)."""
    entropy = (int(seed) & _MASK64,) + tuple(int(p) & _MASK64 for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def step_noise(seed: int, step: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard-normal noise block for one dynamics step.

    The block is keyed by (seed, step); particle j owns row j, so per-particle
    draws are position-independent and a parallel worker regenerating the block
    sees the same values.
    """
    return substream(seed, 1, step).standard_normal(shape)
