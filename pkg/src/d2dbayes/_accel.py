"""Numba toggle for the hot kernels.

Set ``D2DBAYES_DISABLE_NUMBA=1`` to route every kernel through its
vectorised numpy twin instead of the ``@njit`` loop version.
"""
import os

USE_NUMBA = os.environ.get("D2DBAYES_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False


def njit(func=None, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    options = {"cache": True, **kwargs}

    def wrap(f):
        if HAS_NUMBA:
            return numba.njit(**options)(f)
        return f

    if func is None:
        return wrap
    return wrap(func)


def pick(numba_impl, numpy_impl):
    """Select the active implementation of a kernel pair."""
    if USE_NUMBA and HAS_NUMBA:
        return numba_impl
    return numpy_impl
