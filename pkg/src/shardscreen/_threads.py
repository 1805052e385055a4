"""Worker-pool sizing and ordered parallel map over shards.

The pool size is capped by the SHARDSCREEN_THREADS environment variable and
defaults to the available parallelism.  Results are always collected in input
order so aggregation remains a deterministic fold regardless of scheduling.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "SHARDSCREEN_THREADS"


def worker_count() -> int:
    raw = os.environ.get(ENV_THREADS)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def pmap(fn, items):
    """Map fn over items, in parallel when the pool allows, preserving order."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
