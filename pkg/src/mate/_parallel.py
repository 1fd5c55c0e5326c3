"""Deterministic chunked map over a thread pool.

Work is split into fixed-size chunks that do not depend on the worker
count, and results are concatenated in chunk order, so the output is
bit-identical for any ``MATE_THREADS``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 2048


def worker_count() -> int:
    raw = os.environ.get("MATE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, min(n, 64))


def chunk_slices(n: int, chunk: int = CHUNK):
    return [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def map_chunks(fn, n: int, chunk: int = CHUNK) -> list:
    """``[fn(s) for s in chunk_slices(n)]``, evaluated on up to MATE_THREADS threads."""
    slices = chunk_slices(n, chunk)
    workers = min(worker_count(), len(slices))
    if workers <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, slices))
