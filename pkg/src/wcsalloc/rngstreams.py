"""Deterministic, independent RNG substreams keyed by purpose and counters.

Every source of randomness in the package draws from a generator created
here. Keys are tuples like ("train", seed, iteration, episode); the same
key always yields the same stream, so episode rollouts can be re-run,
re-ordered, or parallelized without changing any result, and evaluation
can replay identical environment draws against different policies.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_word(part: str | int) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream key parts must be nonnegative, got {part}")
        return int(part)
    raise TypeError(f"stream key part must be str or int, got {type(part).__name__}")


def substream(*key: str | int) -> np.random.Generator:
    """Create the generator for a (purpose, counters...) key.

    Distinct keys give statistically independent streams; identical keys
    give identical streams.
    """
    if not key:
        raise ValueError("substream key must be nonempty")
    return np.random.default_rng([_key_word(p) for p in key])
