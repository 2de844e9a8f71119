"""Backend selection for the hot kernels.

Set ``IFSYNTH_NO_NUMBA=1`` to force the pure-numpy path. When numba is not
importable the numpy path is used automatically.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False


def _flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAS_NUMBA and not _flag("IFSYNTH_NO_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    Compiled functions are always built when numba exists (so tests and the
    benchmark can compare both paths); ``USE_NUMBA`` only decides which one
    the public kernels dispatch to.
    """
    kwargs.setdefault("cache", True)

    def wrap(fn):
        if not HAS_NUMBA:
            return fn
        return numba.njit(**kwargs)(fn)

    if len(args) == 1 and callable(args[0]):
        return wrap(args[0])
    return wrap


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def set_num_threads(n):
    """Bound BLAS parallelism (``--jobs``). The numba kernels are serial."""
    from threadpoolctl import threadpool_limits

    threadpool_limits(max(1, int(n)))
