"""Optional numba acceleration.

Hot kernels are written once in plain numpy-compatible Python and decorated
with :func:`njit`.  Setting ``MADM_DISABLE_NUMBA=1`` (or running without numba
installed) leaves them as ordinary Python functions, which is slow but runs the
exact same code path and RNG stream.
"""

import os

_DISABLED = os.environ.get("MADM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:  # pragma: no cover - import guard
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

NUMBA_ENABLED = (_numba is not None) and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when acceleration is enabled, identity otherwise."""
    if NUMBA_ENABLED:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def identity(fn):
        return fn

    return identity


def python_version(fn):
    """Return the undecorated Python function behind a (possibly) jitted kernel."""
    return getattr(fn, "py_func", fn)
