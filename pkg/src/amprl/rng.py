"""Deterministic random streams derived from a single run seed.

Every stochastic component pulls its own named substream so that adding or
reordering consumers does not perturb the draws seen by the others.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 63) - 1


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a generator keyed by (seed, name).

    The same pair always yields the same stream, independent of platform
    and of any other substreams created before or after this one.
    """
    if not isinstance(seed, int):
        raise TypeError(f"seed must be an int, got {type(seed).__name__}")
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed & _MASK, tag]))
