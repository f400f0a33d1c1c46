# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``lsqgap._pure`` for the reference versions."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def floyd_supports(const double[:, ::1] uniforms, Py_ssize_t d):
    cdef Py_ssize_t m = uniforms.shape[0], k = uniforms.shape[1]
    cdef Py_ssize_t i, t, s, j
    cdef long long cand
    cdef bint taken
    if k > d:
        raise ValueError(f"cannot draw {k} distinct items from {d}")
    out_arr = np.empty((m, k), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    with nogil:
        for i in range(m):
            for t in range(k):
                j = d - k + t
                cand = <long long>(uniforms[i, t] * (j + 1))
                if cand > j:
                    cand = j
                taken = False
                for s in range(t):
                    if out[i, s] == cand:
                        taken = True
                        break
                out[i, t] = j if taken else cand
    return out_arr


def support_cooccurrence(const long long[:, ::1] supports, Py_ssize_t d):
    cdef Py_ssize_t m = supports.shape[0], k = supports.shape[1]
    cdef Py_ssize_t i, a, b
    out_arr = np.zeros((d, d), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    with nogil:
        for i in range(m):
            for a in range(k):
                for b in range(k):
                    out[supports[i, a], supports[i, b]] += 1
    return out_arr


cdef inline void _rank_one_down(double[:, ::1] P, double[::1] u, double denom) noexcept nogil:
    cdef Py_ssize_t a, b, d = P.shape[0]
    cdef double ua
    for a in range(d):
        ua = u[a] / denom
        for b in range(d):
            P[a, b] -= ua * u[b]


cdef inline double _matvec_dot(double[:, ::1] P, double[::1] x, double[::1] u) noexcept nogil:
    """u = P x; returns x' u."""
    cdef Py_ssize_t a, b, d = P.shape[0]
    cdef double s, acc = 0.0
    for a in range(d):
        s = 0.0
        for b in range(d):
            s += P[a, b] * x[b]
        u[a] = s
        acc += x[a] * s
    return acc


def vaw_online_predictions(const double[:, ::1] X, const double[::1] y, double lam):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t t, a
    cdef double h, c
    P_arr = np.eye(d) / lam
    cdef double[:, ::1] P = P_arr
    cdef double[::1] b = np.zeros(d)
    cdef double[::1] u = np.zeros(d)
    cdef double[::1] x = np.zeros(d)
    preds_arr = np.empty(n)
    cdef double[::1] preds = preds_arr
    with nogil:
        for t in range(n):
            for a in range(d):
                x[a] = X[t, a]
            h = _matvec_dot(P, x, u)
            c = 0.0
            for a in range(d):
                c += u[a] * b[a]
            preds[t] = c / (1.0 + h)
            _rank_one_down(P, u, 1.0 + h)
            for a in range(d):
                b[a] += y[t] * x[a]
    return preds_arr


def vaw_prefix_average(const double[:, ::1] X, const double[::1] y, double lam,
                       const double[:, ::1] Q):
    """Queries are walked through their nonzero entries only, so sparse query
    sets cost ``O(nnz^2)`` per prefix instead of ``O(d^2)``."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], nq = Q.shape[0]
    cdef Py_ssize_t j, q, a, bb, ia, ib
    cdef double h, c, s, qa
    Qarr = np.asarray(Q)
    nz = Qarr != 0.0
    ptr_arr = np.zeros(nq + 1, dtype=np.intp)
    np.cumsum(nz.sum(axis=1), out=ptr_arr[1:])
    rows, cols = np.nonzero(nz)
    cdef Py_ssize_t[::1] ptr = ptr_arr
    cdef Py_ssize_t[::1] idx = np.ascontiguousarray(cols, dtype=np.intp)
    cdef double[::1] val = np.ascontiguousarray(Qarr[rows, cols], dtype=float)
    P_arr = np.eye(d) / lam
    cdef double[:, ::1] P = P_arr
    cdef double[::1] b = np.zeros(d)
    cdef double[::1] Pb = np.zeros(d)
    cdef double[::1] u = np.zeros(d)
    cdef double[::1] x = np.zeros(d)
    acc_arr = np.zeros(nq)
    cdef double[::1] acc = acc_arr
    with nogil:
        for j in range(n):
            for a in range(d):
                s = 0.0
                for bb in range(d):
                    s += P[a, bb] * b[bb]
                Pb[a] = s
            for q in range(nq):
                h = 0.0
                c = 0.0
                for ia in range(ptr[q], ptr[q + 1]):
                    a = idx[ia]
                    qa = val[ia]
                    c += qa * Pb[a]
                    s = 0.0
                    for ib in range(ptr[q], ptr[q + 1]):
                        s += P[a, idx[ib]] * val[ib]
                    h += qa * s
                acc[q] += c / (1.0 + h)
            for a in range(d):
                x[a] = X[j, a]
            h = _matvec_dot(P, x, u)
            _rank_one_down(P, u, 1.0 + h)
            for a in range(d):
                b[a] += y[j] * x[a]
        if n > 0:
            for q in range(nq):
                acc[q] /= n
    return acc_arr
