"""Backend selection for the hot kernels.

Set ``ACMDSA_DISABLE_NUMBA=1`` to force the pure-numpy path. When numba is
not importable the numpy path is used regardless.
"""
import os

_disabled = os.environ.get("ACMDSA_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    Compiles regardless of the env flag so the benchmark can time both paths.
    """
    if _numba is not None:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]):
        return args[0]

    def _wrap(f):
        return f
    return _wrap


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
