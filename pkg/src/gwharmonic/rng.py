"""Reproducible random streams.

Every consumer of randomness gets its own stream keyed by ``(seed, stream_id)``.
Streams are Philox (counter based) generators seeded through ``SeedSequence``,
so the draws a replica sees depend only on its logical labels, never on which
worker thread happened to run it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_id(parent: int, labels: tuple) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(parent.to_bytes(8, "little"))
    for lab in labels:
        h.update(repr(lab).encode())
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def derive(self, *labels) -> "RngStream":
        """Child stream for a (purpose, replica, ...) label tuple."""
        return RngStream(self.seed, _label_id(self.stream_id, labels))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an RngStream, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(0 if rng is None else int(rng)).generator()


def as_stream(rng) -> RngStream:
    """Accept an RngStream, an int seed, a Generator (one draw becomes the seed) or None."""
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, np.random.Generator):
        return RngStream(int(rng.integers(0, 2**63)))
    return RngStream(0 if rng is None else int(rng))


def draw_key(rng) -> int:
    """64-bit key for hash-addressed trees."""
    return int(as_generator(rng).integers(0, 2**64, dtype=np.uint64))
