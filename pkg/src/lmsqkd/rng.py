"""Counter-based random streams keyed by (master seed, party, round index).

Every round owns a fixed block of four 64-bit Philox outputs per party, so a
round's draws depend only on the seed, the party and the round index. Rounds
can therefore be generated in any order or in parallel chunks and still give
bit-identical results.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np

WORDS_PER_ROUND = 4
_TO_UNIT = 2.0 ** -53


class Party(IntEnum):
    SOURCE = 0
    ALICE = 1
    BOB = 2
    CHECK = 3
    HASH = 4


def party_key(master_seed: int, party: int) -> np.ndarray:
    """128-bit Philox key for one party under a master seed."""
    return np.random.SeedSequence([int(master_seed), int(party)]).generate_state(2, np.uint64)


def round_uniforms(master_seed: int, party: int, start: int, stop: int) -> np.ndarray:
    """Uniform doubles in [0, 1) for rounds ``start..stop-1``, shape (n, 4)."""
    n = stop - start
    if n <= 0:
        return np.empty((0, WORDS_PER_ROUND))
    bitgen = np.random.Philox(key=party_key(master_seed, party), counter=start)
    raw = bitgen.random_raw(WORDS_PER_ROUND * n)
    return ((raw >> np.uint64(11)).astype(np.float64) * _TO_UNIT).reshape(n, WORDS_PER_ROUND)


def party_generator(master_seed: int, party: int) -> np.random.Generator:
    """A plain Generator for session-level draws (check split, hash seed)."""
    return np.random.Generator(np.random.Philox(key=party_key(master_seed, party)))


def derive_seed(*parts: int) -> int:
    """Deterministic 64-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


class UniformStream:
    """Sequential reader over a fixed block of uniforms; mimics ``Generator.random``."""

    __slots__ = ("_values", "_pos")

    def __init__(self, values) -> None:
        self._values = values
        self._pos = 0

    def random(self) -> float:
        if self._pos >= len(self._values):
            raise IndexError("round stream exhausted")
        u = float(self._values[self._pos])
        self._pos += 1
        return u


def round_stream(master_seed: int, party: int, index: int) -> UniformStream:
    return UniformStream(round_uniforms(master_seed, party, index, index + 1)[0])
