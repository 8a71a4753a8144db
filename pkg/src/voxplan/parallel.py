"""Worker-pool sizing shared by the mapping and planner kernels.

numba fixes its maximum thread count when it is first imported, defaulting to
the number of visible cores. Results must be reproducible for any requested
worker count (including counts above the core count), so the pool maximum is
raised to at least ``_MIN_POOL`` before the first numba import.
"""

from __future__ import annotations

import os

_MIN_POOL = 16

_env = os.environ.get("NUMBA_NUM_THREADS")
if _env is None:
    cores = os.cpu_count() or 1
    os.environ["NUMBA_NUM_THREADS"] = str(max(_MIN_POOL, cores))

# Probing TBB first emits a spurious version warning on some hosts; OpenMP
# is always present alongside numba's bundled runtime.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba  # noqa: E402

DEFAULT_THREAD_ENV = "PARAMAP_THREADS"


def max_threads() -> int:
    """Largest worker count that can be requested in this process."""
    return int(numba.config.NUMBA_NUM_THREADS)


def default_threads() -> int:
    """Thread count from PARAMAP_THREADS, falling back to the core count."""
    env = os.environ.get(DEFAULT_THREAD_ENV)
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(
                f"{DEFAULT_THREAD_ENV} must be a positive integer, got {env!r}"
            ) from None
        if n < 1:
            raise ValueError(f"{DEFAULT_THREAD_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def set_threads(n: int) -> int:
    """Set the worker count for all parallel kernels.

    Counts above the pool maximum are clamped (they would oversubscribe the
    pool rather than add parallelism). Returns the effective count.
    """
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    effective = min(n, max_threads())
    numba.set_num_threads(effective)
    return effective


def get_threads() -> int:
    """Current worker count."""
    return int(numba.get_num_threads())
