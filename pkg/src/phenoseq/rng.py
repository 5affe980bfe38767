"""Deterministic named random streams.

Every source of randomness in the package flows from a single integer seed
through a named stream, so that independent components (weight init, dropout,
shuffling, data synthesis) draw from non-overlapping, order-independent
substreams.  Streams are keyed by (seed, stream name, *indices); the same key
always yields the same generator state.
"""

from __future__ import annotations

import zlib

import numpy as np

# Canonical stream names used across the package.
STREAM_INIT = "init"
STREAM_DROPOUT = "dropout"
STREAM_SHUFFLE = "shuffle"
STREAM_SYNTH = "synth"


def stream(seed: int, name: str, *key: int) -> np.random.Generator:
    """Return a fresh generator for the (seed, name, *key) substream.

    ``key`` components must be nonnegative integers (epoch numbers, episode
    indices, label indices, ...).  Two calls with the same arguments return
    generators producing identical draws.
    """
    if any(k < 0 for k in key):
        raise ValueError(f"stream key components must be nonnegative, got {key}")
    tag = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(tag, *key))
    return np.random.default_rng(ss)
