"""Pure NumPy implementations of the pair-sum kernels.

``Z`` is stored pair-major: shape ``(n_pairs, F)``, one row per test/control
difference. ``H`` has shape ``(K, F)``. Signatures match ``_kernels.pyx``.
"""
import numpy as np


def _project(H, Z):
    return Z @ H.T


def _sign(P, zero_tol):
    S = np.sign(P)
    S[np.abs(P) <= zero_tol] = 0.0
    return S


def pair_magnitudes(H, Z):
    if Z.shape[0] == 0:
        return np.zeros(0)
    return np.abs(_project(H, Z)).max(axis=1)


def sign_gradient(H, Z, a, zero_tol):
    """Return (delta, max_active, residual) over the pairs with ``a == 1``."""
    mask = np.asarray(a, dtype=bool)
    Za = Z[mask]
    if Za.shape[0] == 0:
        return np.zeros_like(H), 0.0, 0.0
    P = _project(H, Za)
    absP = np.abs(P)
    delta = -(_sign(P, zero_tol).T @ Za)
    return delta, float(absP.max()), float(absP.sum())


def fused_step(H, Z, threshold, zero_tol):
    """Slack update against ``threshold`` followed by the sign gradient, one pass."""
    if Z.shape[0] == 0:
        return np.zeros(0, dtype=np.uint8), np.zeros_like(H), 0.0, 0.0
    P = _project(H, Z)
    absP = np.abs(P)
    mags = absP.max(axis=1)
    mask = mags <= threshold
    Pa = P[mask]
    if Pa.shape[0] == 0:
        return mask.astype(np.uint8), np.zeros_like(H), 0.0, 0.0
    delta = -(_sign(Pa, zero_tol).T @ Z[mask])
    return mask.astype(np.uint8), delta, float(mags[mask].max()), float(absP[mask].sum())


def count_collapsed(H, Z, tol):
    if Z.shape[0] == 0:
        return 0
    return int(np.count_nonzero(pair_magnitudes(H, Z) <= tol))


def pair_differences(XT, XC, ti, ci):
    return XT[ti] - XC[ci]
