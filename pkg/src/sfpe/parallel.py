"""Fixed-size work chunks mapped over an optional thread pool.

Chunk boundaries depend only on the item count, so results assembled in
chunk order are identical for any number of workers.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor

CHUNK = 4096

_local = threading.local()


def chunk_bounds(n_items, size=CHUNK):
    return [(lo, min(lo + size, n_items)) for lo in range(0, n_items, size)]


def map_chunks(fn, bounds, workers=1):
    """Apply ``fn(index, lo, hi)`` to every chunk and return results in order.

    Calls made from inside a worker run sequentially, which keeps nested
    evaluations from oversubscribing the pool.
    """
    jobs = list(enumerate(bounds))
    if workers <= 1 or len(jobs) <= 1 or getattr(_local, "inside", False):
        return [fn(i, lo, hi) for i, (lo, hi) in jobs]

    def run(job):
        _local.inside = True
        try:
            i, (lo, hi) = job
            return fn(i, lo, hi)
        finally:
            _local.inside = False

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))
