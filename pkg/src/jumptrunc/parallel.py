"""Path-parallel execution with scheduling-independent results.

Paths are cut into fixed-size batches (the cut never depends on the worker
count), batches run on a thread pool, and results come back in batch order.
Callers reduce over the concatenated per-path arrays, so aggregates are the
same for any number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "JUMPTRUNC_THREADS"
DEFAULT_BATCH = 256


def worker_count(workers=None) -> int:
    if workers is None:
        workers = int(os.environ.get(ENV_THREADS, "1") or 1)
    return max(1, int(workers))


def batches(n_paths: int, batch_size: int = DEFAULT_BATCH):
    return [range(i, min(i + batch_size, n_paths)) for i in range(0, n_paths, batch_size)]


def map_batches(fn, n_paths: int, batch_size: int = DEFAULT_BATCH, workers=None) -> list:
    """Apply ``fn(range_of_path_indices)`` to every batch; results in batch order."""
    chunks = batches(n_paths, batch_size)
    n = worker_count(workers)
    if n == 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, chunks))
