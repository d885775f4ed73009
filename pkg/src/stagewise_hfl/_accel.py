"""numba switch.

Set ``STAGEWISE_HFL_NO_NUMBA=1`` before import to run every kernel as plain
Python/numpy. Results are identical either way; only speed differs.
"""

import os

USE_NUMBA = os.environ.get("STAGEWISE_HFL_NO_NUMBA", "").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def njit(func):
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func
