"""Worker-count helper: BPJDET_THREADS caps the pool, default serial."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("BPJDET_THREADS", "1")))
    except ValueError:
        raise ValueError("BPJDET_THREADS must be an integer") from None


def map_workers(fn, items):
    """Ordered map over items, threaded when BPJDET_THREADS > 1."""
    items = list(items)
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
