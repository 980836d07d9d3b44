"""Numba switch.

Set ``MDPCFL_DISABLE_NUMBA=1`` to force the pure-numpy kernel paths. Numba is
also skipped silently when it cannot be imported.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

ENABLE_NUMBA = numba is not None and os.environ.get("MDPCFL_DISABLE_NUMBA", "0") not in ("1", "true", "yes")
CACHE_NUMBA = True


def njit(func):
    """Compile ``func`` in nopython mode, or return it unchanged."""
    if not ENABLE_NUMBA:
        return func
    return numba.njit(cache=CACHE_NUMBA, nogil=True)(func)


def backend_name():
    return "numba" if ENABLE_NUMBA else "numpy"
