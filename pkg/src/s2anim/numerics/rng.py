"""Seeded, splittable random streams.

All randomness in the package flows from :class:`RngState`. Streams use
numpy's Philox-4x64-10 counter-based bit generator keyed through
``SeedSequence``, whose output is specified bit-for-bit and does not depend
on platform. Child streams are derived from an integer path, so a corpus
utterance ``i`` always sees the same stream regardless of how many siblings
were generated before it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ALGORITHM = "philox4x64-10/seedsequence"


@dataclass(frozen=True)
class RngState:
    seed: int
    path: tuple[int, ...] = ()
    algorithm: str = ALGORITHM

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    def child(self, *keys: int) -> RngState:
        return RngState(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))
