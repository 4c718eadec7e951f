"""Numba switch.

Set ``DELTA_METROLOGY_NUMBA=0`` to force the pure-numpy kernels even when
numba is installed.  The flag is read once at import.
"""
import logging
import os

ENV_FLAG = "DELTA_METROLOGY_NUMBA"

try:
    import numba

    logging.getLogger("numba").setLevel(logging.WARNING)
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # workqueue is always available and keeps prange deterministic enough
        # for our per-pixel independent loops
        numba.config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    numba = None
    HAVE_NUMBA = False


def _flag_enabled():
    raw = os.environ.get(ENV_FLAG, "1").strip().lower()
    return raw not in {"0", "false", "no", "off"}


USE_NUMBA = HAVE_NUMBA and _flag_enabled()


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    Compilation happens regardless of the env flag so the benchmark can
    compare both paths in one process; the flag only picks which path the
    library calls.
    """
    kwargs.setdefault("cache", True)

    def wrap(func):
        if not HAVE_NUMBA:
            return func
        return numba.njit(**kwargs)(func)

    if args and callable(args[0]):
        return wrap(args[0])
    return wrap


if HAVE_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def backend():
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n):
    """Cap the numba thread pool; returns the count actually in effect."""
    if n is None:
        return None
    n = max(1, int(n))
    if HAVE_NUMBA:
        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
    return n
