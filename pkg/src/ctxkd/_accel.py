"""Numba detection.

Set ``CTXKD_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when numba
is importable.  The choice is made once, at import time.
"""

import os

_DISABLED = os.environ.get("CTXKD_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAS_NUMBA = _numba is not None
USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(func):
    """``numba.njit(cache=True)`` when numba is available, else identity."""
    if not HAS_NUMBA:
        return func
    return _numba.njit(cache=True)(func)
