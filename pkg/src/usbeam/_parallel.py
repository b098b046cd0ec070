"""Bounded thread-pool map with deterministic output assembly."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_map(fn, items, threads=None):
    """Apply ``fn`` to each item, preserving order.

    Work units write to disjoint outputs (or return their result), so the
    assembled result is bitwise independent of the worker count.  numpy
    releases the GIL in its inner loops, which is where the time goes.
    """
    items = list(items)
    if threads is None:
        threads = os.cpu_count() or 1
    threads = max(1, min(int(threads), max(len(items), 1)))
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
