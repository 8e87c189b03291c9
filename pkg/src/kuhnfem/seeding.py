"""Reproducible random substreams.

Every task draws from ``SeedSequence(root, spawn_key=(crc32(path),))`` where
``path`` is a slash-separated task name such as ``"mosco/Z/N=3"``.  Streams
depend only on the root seed and the task path, never on scheduling order.
"""
from __future__ import annotations

import zlib

import numpy as np


def task_seed(root: int, path: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=(zlib.crc32(path.encode("utf-8")),))


def task_rng(root: int, path: str) -> np.random.Generator:
    return np.random.default_rng(task_seed(root, path))
