"""Seeded generator hierarchy: every random draw is keyed by (seed, module, item)."""
import zlib

import numpy as np


def rng_for(seed: int, module: str, item: int = 0) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(module.encode()), int(item) & 0xFFFFFFFF]
    return np.random.default_rng(np.random.SeedSequence(key))
