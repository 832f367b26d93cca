"""Numba switch.

Hot kernels are compiled with numba when it is importable and the
``SPKREFINE_DISABLE_NUMBA`` environment variable is not set to a truthy
value. Otherwise the pure-numpy implementations are used.
"""
import os
import warnings

_FLAG = "SPKREFINE_DISABLE_NUMBA"


def _disabled_by_env():
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba as _numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAS_NUMBA = False
    warnings.warn("numba not found, falling back to numpy kernels")

USE_NUMBA = HAS_NUMBA and not _disabled_by_env()


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return _numba.njit(*args, **kwargs)

    def identity(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return identity
