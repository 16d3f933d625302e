"""Named, independent RNG substreams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAM_NAMES = ("placement", "sensing", "search", "shadowing", "ga", "foraging")


class Streams:
    """Each name maps to its own Generator; adding a stream never perturbs the others."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rngs = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._rngs:
            key = zlib.crc32(name.encode("utf-8"))
            self._rngs[name] = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(key,)))
        return self._rngs[name]
