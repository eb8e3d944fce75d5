"""Seeded, splittable random streams shared by init, shuffling and synthesis.

Every consumer derives its own child stream from (seed, label, *indices), so
adding a new consumer never perturbs the draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Independent generator for the stream named by (label, indices)."""
    key = (zlib.crc32(label.encode("utf-8")),) + tuple(int(i) & 0xFFFFFFFF for i in indices)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with draws outside +/-2 std rejected and redrawn."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out
