"""Deterministic random streams keyed by (seed, purpose, index)."""

from __future__ import annotations

import numpy as np


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent Philox stream for ``seed`` and the integer path ``keys``.

    Streams depend only on their keys, so results do not change with the
    order in which work is scheduled or the number of worker threads.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
