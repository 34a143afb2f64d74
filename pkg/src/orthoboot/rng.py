"""Counter-based random streams.

A *key* is a 128-bit integer derived from a master seed and an index path
(``SeedSequence`` with ``spawn_key``). Streams are Philox generators whose
counter carries ``(lane, index, attempt)`` in the high words, so the stream
for draw ``j`` never depends on how many draws came before it or on which
worker produced it.
"""

from __future__ import annotations

import numpy as np

# counter lanes (third 64-bit word of the Philox counter)
LANE_DATA = 1
LANE_NUISANCE = 2
LANE_WEIGHTS = 3
LANE_TREE = 4
LANE_MISC = 5

_MASK64 = (1 << 64) - 1


def derive_key(seed: int, *path: int) -> int:
    """128-bit key for ``seed`` split along ``path``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path))
    lo, hi = ss.generate_state(2, dtype=np.uint64)
    return (int(hi) << 64) | int(lo)


def stream(key: int, lane: int, index: int = 0, attempt: int = 0) -> np.random.Generator:
    """Independent generator for ``(lane, index, attempt)`` under ``key``."""
    counter = [0, attempt & _MASK64, lane & _MASK64, index & _MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
