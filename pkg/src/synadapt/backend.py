"""Kernel backend selection: numba-jitted or pure numpy.

Set SYNADAPT_NO_NUMBA=1 to force the pure-numpy path (same source, no jit).
The choice is made once at import time; `USING_NUMBA` records it.
"""

import os

HAVE_NUMBA = False
try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    pass

_DISABLED = os.environ.get("SYNADAPT_NO_NUMBA", "").strip() not in ("", "0")
USING_NUMBA = HAVE_NUMBA and not _DISABLED


def jit(func):
    """Wrap a kernel with @njit when enabled, otherwise return it unchanged.

    fastmath stays off: IEEE semantics are required for the bitwise
    reproducibility guarantees of the training stages.
    """
    if USING_NUMBA:
        from numba import njit

        return njit(cache=False, fastmath=False)(func)
    return func
