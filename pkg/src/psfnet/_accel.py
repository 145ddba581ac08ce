"""Numba availability and backend selection.

Set ``PSFNET_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when numba
is importable. The choice is made once at import time; individual kernel calls
can still override it with ``backend="numpy"`` or ``backend="numba"``.
"""
import os
import warnings

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_FALSEY = {"", "0", "false", "no", "off"}


def _env_disabled():
    return os.environ.get("PSFNET_DISABLE_NUMBA", "").strip().lower() not in _FALSEY


class PerformanceWarning(UserWarning):
    pass


if HAS_NUMBA and not _env_disabled():
    DEFAULT_BACKEND = "numba"
else:
    DEFAULT_BACKEND = "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise a no-op decorator."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def resolve_backend(backend=None):
    backend = DEFAULT_BACKEND if backend is None else backend
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        warnings.warn("numba is not available, using numpy kernels", PerformanceWarning)
        return "numpy"
    return backend
