"""Deterministic random streams built on the Philox counter-based generator.

Every stochastic operation in the package receives an explicit
``numpy.random.Generator``.  ``stream(seed, *path)`` derives an independent
generator as a pure function of the master seed and a path of names or
indices, so results never depend on call order or thread scheduling: a
worker that needs the generator for sample 1234 constructs
``stream(seed, "sample", 1234)`` locally.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _path_component(value: object) -> int:
    if isinstance(value, (bool,)):
        raise TypeError("stream path components must be ints or strings")
    if isinstance(value, (int, np.integer)):
        v = int(value)
        if v < 0:
            raise ValueError(f"stream path components must be nonnegative, got {v}")
        return v
    if isinstance(value, str):
        digest = hashlib.sha256(value.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"stream path components must be ints or strings, got {type(value)!r}")


def stream(seed: int, *path: object) -> np.random.Generator:
    """Independent generator for ``(seed, *path)``; a pure function of its arguments."""
    seq = np.random.SeedSequence(
        entropy=_path_component(seed), spawn_key=tuple(_path_component(p) for p in path)
    )
    return np.random.Generator(np.random.Philox(seq))
