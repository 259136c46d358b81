"""Named random substreams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("synth", "bootstrap", "subsample", "mcar", "tree", "split")


def stream_key(name: str) -> int:
    if name not in STREAMS:
        raise ValueError(f"unknown random stream {name!r}")
    return zlib.crc32(name.encode())


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *index)``.

    Components that draw from different names never share state, so e.g. the
    MCAR mask does not change when the synthetic sample size changes.
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, stream_key(name), *map(int, index)])


def subseed(seed: int, name: str, *index: int) -> int:
    """A 63-bit integer seed for code that cannot take a Generator (numba kernels)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, stream_key(name), *map(int, index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
