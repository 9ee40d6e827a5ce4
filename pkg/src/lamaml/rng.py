"""Seeded random streams.

Every component draws from its own stream so that, for example, changing the
replay sampling never shifts the weight initialisation.  Streams are numpy
``PCG64`` generators (O'Neill's PCG-XSL-RR 128/64) keyed by a
``SeedSequence`` whose spawn key is derived from the stream label.
"""
from __future__ import annotations

import hashlib

import numpy as np

STREAM_LABELS = ("init", "buffer", "tasks", "sampling", "shuffle")


def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seeded_rng(master_seed: int, stream_label: str) -> np.random.Generator:
    """Independent generator for ``(master_seed, stream_label)``.

    The same pair always yields the same sequence; distinct labels give
    statistically independent streams.
    """
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(_label_key(stream_label),))
    return np.random.Generator(np.random.PCG64(ss))
