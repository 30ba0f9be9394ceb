"""
Ordered task execution. Results always come back in task order, so reductions
downstream see the same sequence whatever the worker count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(workers: int = None) -> int:
    """Explicit value, else DISCLAB_WORKERS, never below 1"""
    if workers is None:
        workers = config.DISCLAB_WORKERS
    return max(1, int(workers))


def run_ordered(fn: Callable[[T], R], tasks: Iterable[T], workers: int = None) -> List[R]:
    """
    Map `fn` over `tasks` and return results in task order.

    numpy's LAPACK calls release the GIL, so threads give real speedups on the
    eigensolve-bound kernels without pickling matrices between processes.

    Args:
        fn: Task function; must not share mutable state across tasks
        tasks: Task descriptions (each carries its own RngStream)
        workers: Thread count; None falls back to DISCLAB_WORKERS

    Returns:
        List of results, same order as `tasks`
    """
    tasks = list(tasks)
    workers = resolve_workers(workers)
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]

    logger.debug("running %d tasks on %d workers", len(tasks), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
