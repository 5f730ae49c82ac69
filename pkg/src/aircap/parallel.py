"""Order-preserving parallel map shared by calibration and the experiments."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool.

    Results come back in input order, and each item is computed the same way
    whatever the thread count, so outputs do not depend on ``threads``.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
