"""Keyed random streams.

Every random draw in the package comes from a :class:`RngStream`, which is a
root seed plus a tuple of integer keys.  Streams are split by appending keys,
so the randomness used by a given block of paths depends only on where that
block sits in the computation, never on scheduling or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    key: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _SEED_MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if any(k < 0 for k in self.key):
            raise ValueError("stream keys must be non-negative")

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def as_stream(rng) -> RngStream:
    """Accept an RngStream or a plain integer seed."""
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError(f"expected RngStream or int seed, got {type(rng).__name__}")
