"""JIT switch for the numeric kernels.

Numba is used when importable unless ``RER_DISABLE_JIT`` is set to a truthy
value, in which case every kernel falls back to its vectorized numpy twin.
The choice is made once, at import time.
"""

import os
import warnings

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba

    HAS_NUMBA = True
    # numba probes the system TBB on first use and complains when it is too
    # old; the kernels never use the TBB threading layer
    warnings.filterwarnings("ignore", message=".*TBB threading layer.*")
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_JIT = HAS_NUMBA and os.environ.get("RER_DISABLE_JIT", "").strip().lower() in _FALSY


def njit(*args, **kwargs):
    """``numba.njit`` when numba is available, otherwise a no-op decorator.

    The decorated function is always compiled if numba exists, so the
    benchmark can compare both paths in one process; ``USE_JIT`` only
    governs which path the public kernels dispatch to.
    """
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


prange = numba.prange if HAS_NUMBA else range


def backend() -> str:
    return "numba" if USE_JIT else "numpy"
