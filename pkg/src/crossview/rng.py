"""Counter-based random streams derived from a single integer seed.

Every stochastic operation asks for its own stream keyed by the global seed
plus a purpose tag and integer coordinates (epoch, step, sample id, ...).
Streams are therefore independent of evaluation order, which is what makes
resumed runs and parallel generation reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np

PURPOSES = ("init", "shuffle", "augment", "dropout", "synth", "gradcheck")


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *coords: int) -> np.random.Generator:
    """Return a Philox generator for ``(seed, purpose, *coords)``."""
    key = [int(seed) & 0xFFFFFFFF, _tag(purpose), *(int(c) & 0xFFFFFFFF for c in coords)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
