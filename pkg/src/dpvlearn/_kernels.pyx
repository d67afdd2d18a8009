# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pair-sum kernels. One sequential pass over Z per call, so
results are bit-reproducible for a given input."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def pair_magnitudes(const double[:, ::1] H, const double[:, ::1] Z):
    cdef Py_ssize_t n = Z.shape[0], K = H.shape[0], F = H.shape[1]
    cdef Py_ssize_t k, i, f
    cdef double p, m
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] mags = out
    with nogil:
        for k in range(n):
            m = 0.0
            for i in range(K):
                p = 0.0
                for f in range(F):
                    p += H[i, f] * Z[k, f]
                p = fabs(p)
                if p > m:
                    m = p
            mags[k] = m
    return out


def sign_gradient(const double[:, ::1] H, const double[:, ::1] Z, a, double zero_tol):
    cdef const unsigned char[::1] act = np.ascontiguousarray(a, dtype=np.uint8)
    cdef Py_ssize_t n = Z.shape[0], K = H.shape[0], F = H.shape[1]
    cdef Py_ssize_t k, i, f
    cdef double p, s, mx = 0.0, resid = 0.0
    out = np.zeros((K, F), dtype=np.float64)
    cdef double[:, ::1] delta = out
    with nogil:
        for k in range(n):
            if not act[k]:
                continue
            for i in range(K):
                p = 0.0
                for f in range(F):
                    p += H[i, f] * Z[k, f]
                if fabs(p) > mx:
                    mx = fabs(p)
                resid += fabs(p)
                if fabs(p) <= zero_tol:
                    continue
                s = 1.0 if p > 0 else -1.0
                for f in range(F):
                    delta[i, f] -= s * Z[k, f]
    return out, mx, resid


def fused_step(const double[:, ::1] H, const double[:, ::1] Z, double threshold, double zero_tol):
    cdef Py_ssize_t n = Z.shape[0], K = H.shape[0], F = H.shape[1]
    cdef Py_ssize_t k, i, f
    cdef double p, m, s, mx = 0.0, resid = 0.0
    cdef double proj[64]
    if K > 64:
        raise ValueError("fused_step supports at most 64 rows")
    a_out = np.zeros(n, dtype=np.uint8)
    out = np.zeros((K, F), dtype=np.float64)
    cdef unsigned char[::1] act = a_out
    cdef double[:, ::1] delta = out
    with nogil:
        for k in range(n):
            m = 0.0
            for i in range(K):
                p = 0.0
                for f in range(F):
                    p += H[i, f] * Z[k, f]
                proj[i] = p
                if fabs(p) > m:
                    m = fabs(p)
            if m > threshold:
                continue
            act[k] = 1
            if m > mx:
                mx = m
            for i in range(K):
                p = proj[i]
                resid += fabs(p)
                if fabs(p) <= zero_tol:
                    continue
                s = 1.0 if p > 0 else -1.0
                for f in range(F):
                    delta[i, f] -= s * Z[k, f]
    return a_out, out, mx, resid


def count_collapsed(const double[:, ::1] H, const double[:, ::1] Z, double tol):
    cdef Py_ssize_t n = Z.shape[0], K = H.shape[0], F = H.shape[1]
    cdef Py_ssize_t k, i, f
    cdef double p
    cdef long count = 0
    cdef bint ok
    with nogil:
        for k in range(n):
            ok = True
            for i in range(K):
                p = 0.0
                for f in range(F):
                    p += H[i, f] * Z[k, f]
                if fabs(p) > tol:
                    ok = False
                    break
            if ok:
                count += 1
    return count


def pair_differences(const double[:, ::1] XT, const double[:, ::1] XC, ti, ci):
    cdef const Py_ssize_t[::1] tv = np.ascontiguousarray(ti, dtype=np.intp)
    cdef const Py_ssize_t[::1] cv = np.ascontiguousarray(ci, dtype=np.intp)
    cdef Py_ssize_t n = tv.shape[0], F = XT.shape[1], k, f
    out = np.empty((n, F), dtype=np.float64)
    cdef double[:, ::1] Z = out
    with nogil:
        for k in range(n):
            for f in range(F):
                Z[k, f] = XT[tv[k], f] - XC[cv[k], f]
    return out
