"""Deterministic random number streams.

Every stochastic component draws from a counter-based Philox generator keyed
by (seed, stream). The same key reproduces the same draws bit-for-bit across
runs and platforms, and distinct streams are statistically independent, so
per-sample generators can be derived from (purpose, step, slot) without any
shared mutable state.
"""

from __future__ import annotations

import numpy as np

# purpose tags for derived stream ids, see stream_id()
INIT = 1
SPLIT = 2
ORDER = 3
UNLABELED = 4
SYNTH = 5
NOISE = 6
TOY = 7

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by (seed, stream); bit-reproducible."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream_id(purpose: int, step: int = 0, slot: int = 0) -> int:
    """Pack (purpose, step, slot) into one 64-bit stream id."""
    if not 0 <= purpose < 256:
        raise ValueError(f"purpose out of range: {purpose}")
    if not 0 <= slot < (1 << 16):
        raise ValueError(f"slot out of range: {slot}")
    return (purpose << 56) | ((step & ((1 << 40) - 1)) << 16) | slot
