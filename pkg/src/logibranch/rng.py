"""Counter-based random streams.

Every stochastic routine takes an integer seed and derives independent
Philox streams from it.  Replicate r of an experiment draws from
``stream(seed, r)``, so serial and parallel execution produce identical
results and any replicate can be re-run in isolation.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "derive"]


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox generator identified by ``(seed, *path)``.

    ``path`` plays the role of a branch address: ``stream(s, 3, 1)`` is
    independent of ``stream(s, 3, 2)`` and of ``stream(s, 3)``.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def derive(seed: int, *path: int) -> int:
    """A well-mixed integer sub-seed for ``(seed, *path)``.

    For handing one branch of a seed tree to an API that takes a plain
    integer seed.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)
