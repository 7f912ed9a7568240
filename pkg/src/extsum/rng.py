"""Seeded random stream with an exactly restorable state.

All randomness in training (shuffling, dropout masks, curriculum coins,
entity permutations, noise sampling) flows through one RngStream so a
checkpointed run can resume bit-identically.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "pcg64"


class RngStream:
    """np.random.Generator wrapper that counts draws and serializes its state."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.draws = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low=0.0, high=1.0, size=None):
        self.draws += 1
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        self.draws += 1
        return self._gen.integers(low, high, size)

    def permutation(self, n: int):
        self.draws += 1
        return self._gen.permutation(n)

    def choice(self, n: int, size=None, p=None, replace=True):
        self.draws += 1
        return self._gen.choice(n, size=size, p=p, replace=replace)

    def state(self) -> dict:
        return {
            "algorithm": ALGORITHM,
            "seed": self.seed,
            "draws": self.draws,
            "bit_generator": _jsonable(self._gen.bit_generator.state),
        }

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        if state.get("algorithm") != ALGORITHM:
            raise ValueError(f"unknown rng algorithm {state.get('algorithm')!r}")
        stream = cls(state["seed"])
        stream.draws = state["draws"]
        stream._gen.bit_generator.state = state["bit_generator"]
        return stream


def _jsonable(obj):
    # PCG64 state dicts contain plain ints/strings but nest one level.
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
