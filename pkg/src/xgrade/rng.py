"""Seed plumbing: every random draw in the package flows from one root seed.

Sub-streams are derived by hashing the root seed together with a purpose
string (e.g. "init", "batches") so adding a new consumer never shifts the
draws of an existing one. Per-sample augmentation seeds additionally mix in
the epoch and the entry index, which makes the pipeline's output independent
of worker parallelism.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _digest64(*parts: object) -> int:
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def substream(seed: int, *names: object) -> np.random.Generator:
    """Return an independent Generator for (seed, *names)."""
    return np.random.default_rng(_digest64(int(seed), *names))


def sample_seed(global_seed: int, epoch: int, entry_index: int) -> int:
    """Seed for one sample's augmentation draws; stable across worker counts."""
    return _digest64(int(global_seed), "sample", int(epoch), int(entry_index))
