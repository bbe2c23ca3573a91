"""Numba switch for the hot kernels.

Set ``PIPROUTE_NO_NUMBA=1`` to run every kernel as plain Python over numpy
arrays. Tours, labels and metrics are identical on both paths because all
randomness is drawn outside the kernels and passed in as arrays; values that
go through exp/log (log-probabilities, scores) agree to a few ulps.
"""
import os

USE_NUMBA = os.environ.get("PIPROUTE_NO_NUMBA", "0").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def njit(func):
    """Compile ``func`` with numba in nopython mode, or return it unchanged."""
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def python_impl(func):
    """The uncompiled body of a kernel (for equivalence checks and benchmarks)."""
    return getattr(func, "py_func", func)
