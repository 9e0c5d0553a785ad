"""Numba switch.

Set ``DUALVC_NO_NUMBA=1`` to force the pure-numpy kernels. When numba is
missing the numpy path is used automatically.
"""
import os

try:
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False
    _njit = None

USE_NUMBA = HAS_NUMBA and os.environ.get("DUALVC_NO_NUMBA", "0") not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise."""
    if HAS_NUMBA:
        return _njit(*args, cache=True, **kwargs)

    def wrap(fn):
        return fn

    return wrap


def set_backend(name):
    """Switch kernels between ``"numba"`` and ``"numpy"`` at runtime."""
    global USE_NUMBA
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    USE_NUMBA = name == "numba"


def backend():
    return "numba" if USE_NUMBA else "numpy"
