"""Deterministic randomness and row-chunked parallel maps.

Row loops are split into fixed-size chunks that do not depend on the thread
count, and BLAS is pinned to one thread inside each chunk, so results are
bit-identical for any number of worker threads.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

CHUNK_ROWS = 2048
_threads = 1


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("thread count must be positive")
    _threads = int(n)


def get_threads() -> int:
    return _threads


@contextmanager
def single_threaded_blas():
    if threadpool_limits is None:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k) & 0xFFFFFFFF


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Counter-based generator for the stream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def map_rows(func, m: int, chunk: int = CHUNK_ROWS):
    """Concatenate ``func(slice)`` over fixed row chunks of ``range(m)``."""
    slices = [slice(i, min(i + chunk, m)) for i in range(0, m, chunk)]
    if _threads == 1 or len(slices) == 1:
        parts = [func(s) for s in slices]
    else:
        with ThreadPoolExecutor(max_workers=_threads) as ex:
            parts = list(ex.map(func, slices))
    return np.concatenate(parts) if parts else np.empty(0)
