"""Seeded random streams for the graphical construction.

Every Poisson clock of the construction is identified by a key
``(family, site, index)``:

* ``L`` : external births from ``site`` towards neighbour number ``index``
  (the order of :func:`flockcp.model.neighbors`), intensity ``lam``;
* ``F`` : internal growth ``index -> index+1`` at ``site``, intensity
  ``index*phi``;
* ``D`` : disaster at ``site`` (``index`` is always 0), intensity 1.

Each key maps to its own :class:`numpy.random.Generator` through
``SeedSequence(seed, spawn_key=...)``, so arrival sequences depend only on
the seed and the key.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

FAMILY_CODES = {"L": 1, "F": 2, "D": 3}

# spawn-key prefixes for the non-clock streams
_KERNEL = 0
_AUX = 4

MASK64 = (1 << 64) - 1


def _zigzag(v: int) -> int:
    return 2 * v if v >= 0 else -2 * v - 1


def trial_seed(base_seed: int, trial: int) -> int:
    """64-bit seed for trial ``trial`` of a campaign; independent of run order."""
    state = np.random.SeedSequence([int(base_seed) & MASK64, int(trial)]).generate_state(2, np.uint32)
    return (int(state[0]) << 32) | int(state[1])


class ClockStreams:
    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64

    @classmethod
    def for_trial(cls, base_seed: int, trial: int) -> "ClockStreams":
        return cls(trial_seed(base_seed, trial))

    def __repr__(self) -> str:
        return f"ClockStreams(seed={self.seed})"

    def _sequence(self, *key: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=tuple(key))

    def clock(self, family: str, site: Sequence[int], index: int = 0) -> np.random.Generator:
        """Generator feeding the inter-arrival times of one clock."""
        code = FAMILY_CODES[family]
        key = (code, len(site), *(_zigzag(int(c)) for c in site), int(index))
        return np.random.Generator(np.random.PCG64(self._sequence(*key)))

    def kernel_seed(self) -> int:
        """32-bit seed for the compiled event engine."""
        return int(self._sequence(_KERNEL).generate_state(1, np.uint32)[0])

    def generator(self, purpose: int = 0) -> np.random.Generator:
        """A stream for auxiliary sampling (founder trials, lineages)."""
        return np.random.Generator(np.random.PCG64(self._sequence(_AUX, int(purpose))))
