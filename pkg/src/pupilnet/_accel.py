"""Numba availability and the environment switches controlling it.

``PUPILNET_NUMBA=0`` forces the pure-numpy kernels even when numba is
installed. ``PUPILNET_THREADS`` caps the worker count (0 or unset means
all cores).
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FALSE = {"0", "false", "no", "off"}

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("PUPILNET_NUMBA", "1").strip().lower() not in _FALSE


def njit(**options):
    """``numba.njit`` with caching, or a no-op decorator without numba."""
    if numba is None:
        def decorate(func):
            return func
        return decorate
    options.setdefault("cache", True)
    options.setdefault("nogil", True)
    return numba.njit(**options)


def worker_count():
    raw = os.environ.get("PUPILNET_THREADS", "").strip()
    cores = os.cpu_count() or 1
    if not raw:
        return cores
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"PUPILNET_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("PUPILNET_THREADS must be >= 0")
    return cores if n == 0 else min(n, cores)
