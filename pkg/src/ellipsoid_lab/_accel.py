"""Backend selection for the hot kernels.

Every kernel in :mod:`ellipsoid_lab.kernels` has a numba implementation and a
pure-numpy implementation with identical results. The numba path is used
unless ``ELLIPSOID_LAB_DISABLE_NUMBA`` is set to a truthy value or numba is
not importable.
"""
import os

_FLAG = "ELLIPSOID_LAB_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


def set_backend(use_numba):
    """Switch backends at runtime (tests and benchmarks use this)."""
    global USE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    USE_NUMBA = bool(use_numba)


def backend():
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n):
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
