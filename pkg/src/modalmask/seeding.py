"""Named, reproducible random substreams.

Every random decision in the package draws from a stream derived from the
single global seed plus a stream name (and optional integer context such
as epoch or fold), so components can be re-seeded or perturbed
independently without disturbing each other.
"""

import zlib

import numpy as np

def substream(seed, name, *context):
    """Generator for stream `name` under `seed`; extra ints extend the key."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(c) & 0xFFFFFFFF for c in context)
    return np.random.default_rng(np.random.SeedSequence(key))
