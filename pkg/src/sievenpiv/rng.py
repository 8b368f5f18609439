"""Counter-based random substreams.

Every stochastic step draws from ``substream(seed, *path)``, a Philox generator
keyed by the full index path (``(seed, replication, bootstrap_rep)``).  Results
therefore do not depend on execution order or on how work is split across
workers.
"""

from __future__ import annotations

from typing import Iterable, Union

import numpy as np

SeedLike = Union[int, Iterable[int]]


def _flatten(seed: SeedLike, path: tuple[int, ...]) -> list[int]:
    head = [int(seed)] if isinstance(seed, (int, np.integer)) else [int(s) for s in seed]
    return head + [int(p) for p in path]


def substream(seed: SeedLike, *path: int) -> np.random.Generator:
    """Independent generator for the index path ``(seed, *path)``."""
    key = _flatten(seed, path)
    if any(k < 0 for k in key):
        raise ValueError("seed components must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
