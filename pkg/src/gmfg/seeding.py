"""Counter-based seed derivation.

Every random stream is ``PCG64(SeedSequence(master, spawn_key=(purpose, *counters)))``.
The spawn key acts as a splittable counter: the stream for (epoch k, class d)
or (sweep size n, replication r) never depends on which other streams were
drawn first, so work can be reordered or run concurrently without changing
results.
"""

from __future__ import annotations

import numpy as np

LEARNER = 1
NPLAYER = 2
CONTRACTION = 3


def stream(seed: int, purpose: int, *counters: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(purpose, *map(int, counters)))
    return np.random.Generator(np.random.PCG64(ss))
