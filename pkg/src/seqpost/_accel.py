"""Numba switch for the hot kernels.

Every kernel in the package exists twice: a numba ``@njit`` version and a
vectorised numpy version. ``SEQPOST_DISABLE_NUMBA=1`` (or a missing numba
install) selects the numpy path. ``SEQPOST_WORKERS`` sets the numba thread
count. Both paths produce the same numbers up to floating point rounding.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def _flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _flag("SEQPOST_DISABLE_NUMBA")

if HAVE_NUMBA and os.environ.get("SEQPOST_WORKERS"):
    numba.set_num_threads(int(os.environ["SEQPOST_WORKERS"]))


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator without numba."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


prange = numba.prange if HAVE_NUMBA else range


def select(fast, slow, use_numba: bool | None = None):
    """Return the numba kernel unless the numpy fallback is requested."""
    if use_numba is None:
        use_numba = USE_NUMBA
    return fast if use_numba else slow
