"""Ordered fan-out over worker processes.

Results always come back in task order, so the worker count can only change
wall-clock time, never output.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_CHUNK = 1 << 16


def ordered_map(fn: Callable[[T], R], tasks: Iterable[T], threads: int = 1) -> list[R]:
    tasks = list(tasks)
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def chunk_bounds(start: int, stop: int, chunk: int) -> list[tuple[int, int]]:
    """Half-open ``[a, b)`` pieces covering ``[start, stop)`` in ascending order."""
    if chunk < 1:
        raise ValueError("chunk size must be positive")
    return [(a, min(a + chunk, stop)) for a in range(start, stop, chunk)]
