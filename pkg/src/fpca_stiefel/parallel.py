"""Process-pool helper honoring the ``FPCA_THREADS`` worker cap."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "FPCA_THREADS"


def worker_count(requested: int | None = None) -> int:
    """Workers to use: ``requested``, else $FPCA_THREADS, else the CPU count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def ordered_map(func: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """``[func(x) for x in items]``, possibly in parallel; output order matches input order.

    ``func`` must be picklable (a module-level function) when more than one
    worker is used.
    """
    items = list(items)
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))
