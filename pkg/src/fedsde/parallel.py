"""Optional thread fan-out for independent simulation chunks.

Chunks carry their own derived random streams, so mapping them across
threads cannot change results; output is merged in submission order.
The worker count defaults to 1 and may be capped with FEDSDE_THREADS.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_max_threads: int | None = None


def set_max_threads(n: int | None) -> None:
    global _max_threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _max_threads = n


def max_threads() -> int:
    if _max_threads is not None:
        return _max_threads
    env = os.environ.get("FEDSDE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return 1


def map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Apply ``fn`` to items, preserving order; threaded when allowed."""
    items = list(items)
    workers = min(max_threads(), len(items)) if items else 1
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
