"""BLAS thread control.

The solver's per-iteration matrices are small (a few hundred rows), where
multi-threaded BLAS synchronization costs far more than it saves, and the
pipeline parallelizes across superpixels instead. Compute-heavy entry points
therefore pin BLAS to one thread; if threadpoolctl is unavailable this is a
no-op.
"""

from __future__ import annotations

from contextlib import contextmanager

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


@contextmanager
def single_threaded_blas():
    if threadpool_limits is None:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=1, user_api="blas"):
        yield
