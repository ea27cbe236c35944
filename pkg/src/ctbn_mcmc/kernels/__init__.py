"""Backend selection for the hot timeline kernels.

The environment variable CTBN_MCMC_BACKEND picks the implementation:

* ``auto`` (default) -- numba when importable, numpy otherwise
* ``numba``          -- require the jitted kernels, fail loudly if missing
* ``numpy``          -- force the pure-numpy fallback

``benchmarks/bench_kernels.py`` compares the two on realistic workloads.
"""

import os

from . import _numpy

_requested = os.environ.get("CTBN_MCMC_BACKEND", "auto").lower()

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"CTBN_MCMC_BACKEND must be auto, numba or numpy, got {_requested!r}")

if _requested == "numpy":
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = _numpy
        BACKEND = "numpy"

rho_scan = _impl.rho_scan
stats_scan = _impl.stats_scan
combine_timeline = _impl.combine_timeline


def active_backend():
    """Name of the kernel backend selected at import time."""
    return BACKEND
