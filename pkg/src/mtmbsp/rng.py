"""Seeded, hierarchically derivable random streams."""
from __future__ import annotations

import numpy as np

_U64 = 2**64


def _check_u64(value: int, name: str) -> int:
    value = int(value)
    if not 0 <= value < _U64:
        raise ValueError(f"{name} must be a 64-bit unsigned integer, got {value}")
    return value


class RandomStream:
    """A single-owner random stream identified by ``(seed, key)``.

    ``key`` is a tuple of unsigned integers; ``child(i)`` appends ``i`` and
    yields a stream that is statistically independent of its parent and of
    every sibling. Two streams built from the same ``(seed, key)`` replay the
    same draws for the same call sequence.

    Do not share one stream between concurrent tasks; derive children instead.
    """

    __slots__ = ("seed", "key", "gen")

    def __init__(self, seed: int = 0, key: tuple[int, ...] | int = ()):
        if isinstance(key, (int, np.integer)):
            key = (int(key),)
        self.seed = _check_u64(seed, "seed")
        self.key = tuple(_check_u64(k, "stream id") for k in key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def stream_id(self) -> tuple[int, ...]:
        return self.key

    def child(self, *ids: int) -> "RandomStream":
        return RandomStream(self.seed, self.key + tuple(int(i) for i in ids))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, key={self.key})"


def as_stream(s: RandomStream | int | None) -> RandomStream:
    if isinstance(s, RandomStream):
        return s
    return RandomStream(0 if s is None else int(s))
