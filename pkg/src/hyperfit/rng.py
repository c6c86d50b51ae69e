"""Named, reproducible random sub-streams derived from one global seed."""
import zlib

import numpy as np

__all__ = ["substream", "subseed"]


def subseed(seed, name, *keys):
    """Entropy list for ``numpy.random.default_rng`` of the stream ``name``."""
    return [int(seed), zlib.crc32(name.encode()), *(int(k) for k in keys)]


def substream(seed, name, *keys):
    """Independent generator for stage ``name`` (e.g. ``"noise"``, ``"kmeans"``)."""
    return np.random.default_rng(subseed(seed, name, *keys))
