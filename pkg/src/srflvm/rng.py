"""Reproducible random number streams.

Every sampler in this package draws from a ``numpy.random.Generator``.
``RngStream`` wraps a root seed plus a split path so that independent
parts of a computation (trials, sweeps, scoring) get statistically
independent generators whose draws do not depend on execution order.
"""

import hashlib

import numpy as np


def _path_to_int(part):
    """Map a path component (int or str) to a stable 64-bit integer."""
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RngStream:
    """A seed lineage: root seed plus a tuple of split path identifiers.

    Streams with distinct paths are statistically independent; the same
    (root, path) always reproduces the same draws regardless of what any
    sibling stream consumed.
    """

    def __init__(self, root_seed, path=()):
        self.root_seed = int(root_seed)
        self.path = tuple(path)

    def child(self, *parts):
        """Split off a sub-stream identified by the extra path parts."""
        return RngStream(self.root_seed, self.path + tuple(parts))

    def generator(self):
        """A fresh Generator at the start of this stream's sequence."""
        entropy = (self.root_seed,) + tuple(_path_to_int(p) for p in self.path)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def __repr__(self):
        return f"RngStream(root={self.root_seed}, path={self.path})"


def as_generator(seed_or_rng):
    """Coerce an int seed, RngStream, Generator, or None to a Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    if isinstance(seed_or_rng, RngStream):
        return seed_or_rng.generator()
    return np.random.default_rng(seed_or_rng)
