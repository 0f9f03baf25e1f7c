"""Named RNG substreams derived from a single root seed.

Every source of randomness in the pipeline (data generation, parameter
init, noise vectors, sampling, batch shuffling) pulls its generator from
here, so a root seed pins the whole run.
"""
from __future__ import annotations

import zlib

import numpy as np


def substream(root_seed: int, name: str) -> np.random.Generator:
    """A generator for the named stream; disjoint across names and seeds."""
    return np.random.default_rng(
        np.random.SeedSequence([root_seed, zlib.crc32(name.encode())])
    )
