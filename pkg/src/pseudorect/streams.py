"""Named random sub-streams derived from one master seed.

Each consumer asks for its own stream by name, so adding or removing one
component never shifts the draws seen by another.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """Independent generator for the path ``names`` under ``seed``."""
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
