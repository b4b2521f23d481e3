"""Deterministic random-state plumbing.

All stochastic code in the package takes an explicit :class:`numpy.random.Generator`.
Worker and sub-experiment seeds are derived from a master seed with splitmix64,
so a run is reproducible regardless of how trials are scheduled.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One splitmix64 step: maps a 64-bit state to a well-mixed 64-bit output."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(master: int, *path: int) -> int:
    """Derive a child seed from a master seed and an index path.

    Successive indices are folded in with splitmix64 so that
    ``derive_seed(s, i)`` and ``derive_seed(s, j)`` are unrelated streams
    for i != j, and ``derive_seed(s, i, t)`` gives per-trial sub-streams.
    """
    state = splitmix64(master & _MASK)
    for index in path:
        state = splitmix64(state ^ ((index + 1) & _MASK))
    return state


def make_rng(seed: int) -> np.random.Generator:
    """Fresh PCG64 generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(seed & _MASK))


def spawn_rngs(master: int, count: int, *path: int) -> list[np.random.Generator]:
    """Independent generators for ``count`` workers/trials under one master seed."""
    return [make_rng(derive_seed(master, *path, i)) for i in range(count)]
