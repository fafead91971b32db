"""JIT selection for the numeric kernels.

Kernels are written as plain numpy/scalar Python so they run unchanged when
numba is absent or disabled. Set ``SOFTARM_DISABLE_JIT=1`` before import to
force the pure-Python path (used by the parity tests and the benchmark).
"""
import os

_FLAG = os.environ.get("SOFTARM_DISABLE_JIT", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

JIT_ENABLED = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def jit(fn):
    if JIT_ENABLED:
        return numba.njit(cache=True)(fn)
    return fn
