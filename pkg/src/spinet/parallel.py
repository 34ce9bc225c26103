"""Process pool over independent trajectories with deterministic ordering."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def worker_count(requested: int | None = None) -> int:
    """Pool size: ``requested`` (default: CPU count), capped by ``SPINET_THREADS``."""
    n = (os.cpu_count() or 1) if requested is None else int(requested)
    env = os.environ.get("SPINET_THREADS")
    if env:
        n = min(n, int(env))
    return max(1, n)


def map_paths(fn, jobs, workers: int | None = None) -> list:
    """``[fn(j) for j in jobs]``, spread over processes when more than one
    worker is available. Output order always follows ``jobs``."""
    jobs = list(jobs)
    n = min(worker_count(workers), len(jobs))
    if n <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, jobs))
