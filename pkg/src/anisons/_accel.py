"""Backend switch for the hot spectral kernels.

Numba is used when it imports cleanly and ``ANISONS_DISABLE_NUMBA`` is unset
(or set to ``0``/``false``).  Otherwise every kernel falls back to its
pure-numpy twin in :mod:`anisons.kernels`.
"""

import os

_FALSEY = {"", "0", "false", "no", "off"}


def _numba_requested():
    return os.environ.get("ANISONS_DISABLE_NUMBA", "").strip().lower() in _FALSEY


try:
    if not _numba_requested():
        raise ImportError("numba disabled by ANISONS_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(f):
        return f

    return wrapper


def backend_name():
    return "numba" if HAVE_NUMBA else "numpy"
