"""Kernel backend selection.

Hot numeric kernels in :mod:`nodalstats.kernels` exist in two versions: a
numba ``@njit`` build and a pure-numpy fallback. The active backend is chosen
once at import time:

* if the environment variable ``NODALSTATS_NO_NUMBA`` is set to a non-empty
  value other than ``0``, the numpy fallback is used;
* if numba is not importable, the numpy fallback is used;
* otherwise the numba build is used.

``ACTIVE_BACKEND`` reports the choice ("numba" or "numpy").
"""

import os
import warnings

# numba probes TBB at import; on hosts with an old TBB it warns and falls
# back to omp/workqueue on its own, so the warning is pure noise here
warnings.filterwarnings("ignore", message=".*TBB.*", module="numba.*")

_flag = os.environ.get("NODALSTATS_NO_NUMBA", "").strip()
_disabled = _flag not in ("", "0")

if not _disabled:
    try:
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - exercised via env flag instead
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

if not HAVE_NUMBA:
    def njit(*args, **kwargs):
        """No-op replacement for numba.njit."""

        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range

ACTIVE_BACKEND = "numba" if HAVE_NUMBA else "numpy"
