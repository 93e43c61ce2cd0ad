"""Thread-pool helper with deterministic result ordering."""

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads):
    """Map the user-facing thread count (0 = auto) to a worker count >= 1."""
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


def thread_map(fn, items, threads=0):
    """Apply ``fn`` to every item, returning results in input order.

    Results must not depend on execution order; this helper only
    parallelises independent work.
    """
    items = list(items)
    workers = resolve_threads(threads)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
