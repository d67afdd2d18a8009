"""Backend selection for the pair-sum kernels.

The compiled extension is used when it imports; otherwise the NumPy fallback.
Set ``DPVLEARN_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("DPVLEARN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pair_magnitudes(H, Z, impl=None):
    return (impl or _impl).pair_magnitudes(_c(H), _c(Z))


def sign_gradient(H, Z, a, zero_tol=0.0, impl=None):
    return (impl or _impl).sign_gradient(_c(H), _c(Z), np.asarray(a, dtype=np.uint8), float(zero_tol))


def fused_step(H, Z, threshold, zero_tol=0.0, impl=None):
    return (impl or _impl).fused_step(_c(H), _c(Z), float(threshold), float(zero_tol))


def count_collapsed(H, Z, tol=0.0, impl=None):
    return int((impl or _impl).count_collapsed(_c(H), _c(Z), float(tol)))


def pair_differences(XT, XC, ti, ci, impl=None):
    return (impl or _impl).pair_differences(_c(XT), _c(XC), np.asarray(ti, dtype=np.intp), np.asarray(ci, dtype=np.intp))


def available_backends():
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
