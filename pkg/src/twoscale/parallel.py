"""Thread-pool helpers.

Work is split into independent tasks that a pool hands to whichever worker
is free next.  Tasks write only to their own output slot (or to disjoint
slices of a shared array); merging happens after the pool joins.  The heavy
kernels are numpy/scipy calls, which release the GIL.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def default_workers() -> int:
    env = os.environ.get("TWOSCALE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def chunk_slices(n: int, parts: int) -> list[slice]:
    """Split ``range(n)`` into at most ``parts`` contiguous, non-empty slices."""
    parts = max(1, min(parts, n))
    bounds = [round(k * n / parts) for k in range(parts + 1)]
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def map_tasks(fn: Callable[[T], R], tasks: Iterable[T], workers: int = 1) -> list[R]:
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def tree_sum(parts: Sequence):
    """Pairwise reduction of partial results (fixed order)."""
    parts = list(parts)
    while len(parts) > 1:
        parts = [parts[i] + parts[i + 1] if i + 1 < len(parts) else parts[i] for i in range(0, len(parts), 2)]
    return parts[0]
