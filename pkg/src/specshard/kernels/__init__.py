"""Hot kernels with a compiled path and a pure-NumPy fallback.

The compiled (numba) path is used unless numba is missing or the environment
variable ``SPECSHARD_DISABLE_NUMBA`` is set to a truthy value (``1``, ``true``,
``yes``). The flag is read once, at import time.
"""

import os

_FLAG = os.environ.get("SPECSHARD_DISABLE_NUMBA", "").strip().lower()

if _FLAG in ("1", "true", "yes", "on"):
    USE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        USE_NUMBA = True
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:
    from ._numba import brewer_draws, cps_draws, jacobi_svd, numpy_style_draws
else:
    from ._numpy import brewer_draws, cps_draws, jacobi_svd, numpy_style_draws

BACKEND = "numba" if USE_NUMBA else "numpy"

__all__ = [
    "BACKEND",
    "USE_NUMBA",
    "brewer_draws",
    "cps_draws",
    "jacobi_svd",
    "numpy_style_draws",
]
