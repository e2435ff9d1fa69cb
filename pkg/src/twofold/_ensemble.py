"""Deterministic block-parallel execution for ensembles.

Work is cut into fixed-size blocks. Block ``b`` draws its random numbers from
``SeedSequence(seed, spawn_key=(b,))``, so the numbers a path sees depend only
on ``(seed, path index)`` and never on how many workers ran the blocks.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

import numpy as np

BLOCK_SIZE = 4096
WORKERS_ENV = "TWOFOLD_WORKERS"

T = TypeVar("T")


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    key = (block,) if stream == 0 else (block, stream)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def blocks(n: int, size: int = BLOCK_SIZE) -> List[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def group_blocks(n_blocks: int, workers: int | None = None) -> List[List[int]]:
    """Split block indices into at most ``workers`` contiguous groups."""
    workers = worker_count() if workers is None else workers
    n_groups = max(1, min(workers, n_blocks))
    bounds = np.linspace(0, n_blocks, n_groups + 1).round().astype(int)
    return [list(range(bounds[i], bounds[i + 1])) for i in range(n_groups) if bounds[i + 1] > bounds[i]]


class GroupNoise:
    """Standard normals for a group of blocks, drawn chunk by chunk.

    Each block keeps its own generator; columns are laid out block after
    block, so a path sees the same numbers however blocks are grouped.
    """

    def __init__(self, seed: int, block_ids: Sequence[int], sizes: Sequence[int], chunk: int,
                 stream: int = 0):
        self._rngs = [block_rng(seed, b, stream) for b in block_ids]
        self._sizes = list(sizes)
        self.chunk = chunk

    def next_chunk(self, extra: tuple = ()) -> np.ndarray:
        """Array of shape ``(chunk, *extra, paths)``."""
        return np.concatenate([g.standard_normal((self.chunk, *extra, s))
                               for g, s in zip(self._rngs, self._sizes)], axis=-1)


def run_map(fn: Callable[[T], object], items: Sequence[T], workers: int | None = None) -> list:
    """``[fn(item) for item in items]``, possibly threaded; order is preserved."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def binomial_stderr(successes: int, n: int) -> float:
    if n <= 0:
        raise ValueError("n must be positive")
    p = successes / n
    return float(np.sqrt(p * (1.0 - p) / n))
