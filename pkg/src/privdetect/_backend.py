"""Kernel backend selection.

Set ``PRIVDETECT_BACKEND=numpy`` to force the pure-numpy kernels; the default
(``auto``) uses numba when it imports cleanly.
"""
import os

_requested = os.environ.get("PRIVDETECT_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ImportError(f"PRIVDETECT_BACKEND must be auto, numba or numpy, got {_requested!r}")

_numba = None
if _requested != "numpy":
    try:
        import numba as _numba
    except ImportError:
        if _requested == "numba":
            raise

HAS_NUMBA = _numba is not None
BACKEND = "numba" if HAS_NUMBA else "numpy"


def njit(*args, **kwargs):
    """numba.njit when available, otherwise the identity decorator."""
    if HAS_NUMBA:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
