"""Deterministic, collision-resistant RNG streams.

Every randomized stage derives its generator from the single run seed plus a
stream path like ("synth", 17) or ("train", epoch, batch). Stream parts are
folded through SHA-256 so distinct paths cannot collide in the seed space,
and each stream is an independent Philox generator: processing order or
parallelism cannot change what any one stream yields.
"""

import hashlib

import numpy as np


def rng_for(seed: int, *parts) -> np.random.Generator:
    """Independent generator for the stream identified by (seed, *parts)."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for part in parts:
        digest = hashlib.sha256(repr(part).encode("utf-8")).digest()
        words.append(int.from_bytes(digest[:8], "little"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
