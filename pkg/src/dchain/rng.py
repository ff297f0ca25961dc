"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, stream_id)``.  A stream id
packs a domain tag (what the numbers are used for) and an index (particle,
chain level, replica block, ...), so the numbers a particle sees depend only on
the seed and its own identity, never on evaluation order or thread layout.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np

_MASK64 = (1 << 64) - 1
_INDEX_BITS = 40


class Domain(IntEnum):
    """Stream domains. Values are part of the stream key; never renumber."""

    NOISE = 1
    INITIAL = 2
    RESAMPLE = 3
    LEVEL_NOISE = 4
    LEVEL_INITIAL = 5
    CLOSURE = 6
    POISSON = 7
    FEYNMAN_KAC = 8
    DISCRETE = 9
    FILTER = 10
    MISC = 15


def stream_id(domain: int, index: int, sub: int = 0) -> int:
    if index < 0 or index >= (1 << _INDEX_BITS):
        raise ValueError(f"stream index out of range: {index}")
    return ((int(sub) & 0xFFFF) << 48 | (int(domain) & 0xFF) << _INDEX_BITS | int(index)) & _MASK64


def stream(seed: int, domain: int, index: int = 0, sub: int = 0) -> np.random.Generator:
    """Return the generator for one ``(seed, domain, index, sub)`` stream."""
    key = [int(seed) & _MASK64, stream_id(domain, index, sub)]
    return np.random.Generator(np.random.Philox(key=key))


class BlockNoise:
    """Standard normal increments for many streams, drawn in time blocks.

    ``block(nsteps)`` returns an array of shape ``(nstreams, nsteps)``; each
    row continues its own stream, so the concatenation of successive blocks
    does not depend on the block sizes used.
    """

    def __init__(self, seed: int, domain: int, indices, sub: int = 0):
        self._gens = [stream(seed, domain, int(i), sub) for i in indices]

    def __len__(self) -> int:
        return len(self._gens)

    def block(self, nsteps: int) -> np.ndarray:
        out = np.empty((len(self._gens), nsteps))
        for row, g in enumerate(self._gens):
            g.standard_normal(out=out[row])
        return out


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministically derive a child seed (used for replications)."""
    ss = np.random.SeedSequence([int(seed) & _MASK64, *[int(x) for x in labels]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
