"""Order-preserving replica fan-out.

Results come back in submission order, so any reduction over them is
independent of worker count and completion order.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def replica_map(func: Callable[[T], R], items: Iterable[T], workers: int = 1,
                chunksize: int = 8) -> list[R]:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, items, chunksize=chunksize))
