"""Deterministic ordered parallel map.

Work items carry their own derived seeds, and results are reduced in item
order, so output is identical for any worker count (bit-identical, since no
floating-point reduction order changes with the schedule).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def pmap_ordered(fn, items, threads: int = 1, chunksize: int = 1):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, chunksize)))
