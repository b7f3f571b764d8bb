"""Deterministic RNG substreams.

Every randomized stage derives its generator from one master seed plus a
stage label, so reruns with the same seed are byte-identical and stages can
be re-executed in isolation without disturbing each other's streams.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def substream(seed: int, label: str) -> np.random.Generator:
    """Generator for (seed, label), stable across platforms and runs."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *_label_words(label)]))
