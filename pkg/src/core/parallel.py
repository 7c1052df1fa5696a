"""Deterministic chunked map/reduce over trajectory indices.

Chunk boundaries depend only on the chunk size, never on the worker count, and
results are re-assembled in chunk order before reduction, so every reduction
sees the same operands in the same order whatever the schedule.
"""

import concurrent.futures
import functools
from typing import Any, Callable, List, Sequence, Tuple

import structlog

logger = structlog.get_logger()


def chunk_ranges(count: int, chunk_size: int) -> List[Tuple[int, int]]:
    """Split ``range(count)`` into consecutive ``(start, stop)`` chunks."""
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be positive, got {chunk_size}")
    return [(start, min(start + chunk_size, count)) for start in range(0, count, chunk_size)]


def parallel_map(func: Callable[..., Any], arguments: Sequence[Tuple], threads: int = 1) -> List[Any]:
    """Apply ``func(*args)`` to every tuple, returning results in input order.

    Uses a process pool when ``threads > 1``; ``func`` and its arguments must
    then be picklable (module-level functions, partials of them).
    """
    if threads <= 1 or len(arguments) <= 1:
        return [func(*args) for args in arguments]

    results: List[Any] = [None] * len(arguments)
    with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as executor:
        futures = {executor.submit(func, *args): index for index, args in enumerate(arguments)}
        for future in concurrent.futures.as_completed(futures):
            results[futures[future]] = future.result()
    logger.debug("Parallel map finished", tasks=len(arguments), threads=threads)
    return results


def map_reduce(
    map_function: Callable[..., Any],
    reduce_function: Callable[[Any, Any], Any],
    arguments: Sequence[Tuple],
    threads: int = 1,
) -> Any:
    """``functools.reduce(reduce_function, map(map_function, arguments))`` in input order."""
    return functools.reduce(reduce_function, parallel_map(map_function, arguments, threads))
