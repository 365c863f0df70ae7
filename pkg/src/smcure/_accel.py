"""Optional numba acceleration.

Set ``SMCURE_DISABLE_NUMBA=1`` (before import) to force the pure-numpy
kernels. Numba is also skipped silently when it is not installed.
"""
import os

_FLAG = "SMCURE_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _env_disabled()


def njit(func):
    """Compile ``func`` with numba in nopython mode (cached on disk)."""
    if numba is None:
        raise RuntimeError("numba is not available")
    return numba.njit(cache=True, fastmath=False)(func)
