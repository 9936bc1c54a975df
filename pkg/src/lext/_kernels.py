"""Hot inner-loop kernels with a numba fast path and a scipy/numpy fallback.

The numba path is the default. Set ``LEXT_DISABLE_NUMBA=1`` to force the
fallback (useful on platforms without a working numba, and as the reference
implementation for equivalence tests). ``benchmarks/bench_kernels.py``
compares both paths.
"""

import os

import numpy as np
from scipy import signal as _scipy_signal

USE_NUMBA = os.environ.get("LEXT_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False


def _sos_filter_py(sos, x):
    """Direct-form-II-transposed cascade, one pass over the signal."""
    n_sections = sos.shape[0]
    y = x.copy()
    z1 = np.zeros(n_sections)
    z2 = np.zeros(n_sections)
    for i in range(y.shape[0]):
        v = y[i]
        for s in range(n_sections):
            b0, b1, b2, _, a1, a2 = sos[s]
            out = b0 * v + z1[s]
            z1[s] = b1 * v - a1 * out + z2[s]
            z2[s] = b2 * v - a2 * out
            v = out
        y[i] = v
    return y


def _sos_filter_scipy(sos, x):
    return _scipy_signal.sosfilt(sos, x)


if USE_NUMBA:
    _sos_filter_numba = njit(cache=True)(_sos_filter_py)

    def sos_filter(sos, x):
        """Apply a second-order-section cascade to a 1-D float64 signal."""
        return _sos_filter_numba(
            np.ascontiguousarray(sos, dtype=np.float64),
            np.ascontiguousarray(x, dtype=np.float64),
        )

else:

    def sos_filter(sos, x):
        """Apply a second-order-section cascade to a 1-D float64 signal."""
        return _sos_filter_scipy(
            np.ascontiguousarray(sos, dtype=np.float64),
            np.ascontiguousarray(x, dtype=np.float64),
        )


def backend_name():
    return "numba" if USE_NUMBA else "scipy"
