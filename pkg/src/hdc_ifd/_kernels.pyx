# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: 1-D convolution, max pooling, HDC online retraining.

Same contracts as ``_fallback``. Loops accumulate in a fixed order, so
results are deterministic but may differ from the numpy path in the last
few ulps.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY
from scipy.linalg.cython_blas cimport ddot, daxpy

cnp.import_array()


def conv1d_forward(const double[:, :, ::1] x, const double[:, :, ::1] w, const double[::1] b):
    cdef Py_ssize_t B = x.shape[0], cin = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t lout = L - K + 1
    out_arr = np.empty((B, cout, lout))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t n, o, c, t, k
    cdef double wk
    cdef double *op
    cdef const double *xp
    with nogil:
        for n in range(B):
            for o in range(cout):
                op = &out[n, o, 0]
                for t in range(lout):
                    op[t] = b[o]
                # axpy over output positions keeps the inner loop vectorizable
                for c in range(cin):
                    for k in range(K):
                        wk = w[o, c, k]
                        xp = &x[n, c, k]
                        for t in range(lout):
                            op[t] += wk * xp[t]
    return out_arr


def conv1d_backward(const double[:, :, ::1] x, const double[:, :, ::1] w,
                    const double[:, :, ::1] dout, bint need_dx=True):
    cdef Py_ssize_t B = x.shape[0], cin = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t lout = dout.shape[2]
    dw_arr = np.zeros((cout, cin, K))
    db_arr = np.zeros(cout)
    dx_arr = np.zeros((B, cin, L)) if need_dx else None
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, :, ::1] dx
    if need_dx:
        dx = dx_arr
    cdef Py_ssize_t n, o, c, t, k
    cdef double g
    with nogil:
        for n in range(B):
            for o in range(cout):
                for t in range(lout):
                    g = dout[n, o, t]
                    if g == 0.0:
                        continue
                    db[o] += g
                    for c in range(cin):
                        for k in range(K):
                            dw[o, c, k] += g * x[n, c, t + k]
                    if need_dx:
                        for c in range(cin):
                            for k in range(K):
                                dx[n, c, t + k] += g * w[o, c, k]
    return dx_arr, dw_arr, db_arr


def maxpool_forward(const double[:, :, ::1] x, Py_ssize_t p):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t lp = L // p
    out_arr = np.empty((B, C, lp))
    idx_arr = np.empty((B, C, lp), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, t, k, start, arg
    cdef double best
    with nogil:
        for n in range(B):
            for c in range(C):
                for t in range(lp):
                    start = t * p
                    arg = start
                    best = x[n, c, start]
                    for k in range(1, p):
                        if x[n, c, start + k] > best:
                            best = x[n, c, start + k]
                            arg = start + k
                    out[n, c, t] = best
                    idx[n, c, t] = arg
    return out_arr, idx_arr


def maxpool_backward(const double[:, :, ::1] dout, const cnp.int64_t[:, :, ::1] idx, Py_ssize_t L):
    cdef Py_ssize_t B = dout.shape[0], C = dout.shape[1], lp = dout.shape[2]
    dx_arr = np.zeros((B, C, L))
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, t
    with nogil:
        for n in range(B):
            for c in range(C):
                for t in range(lp):
                    dx[n, c, idx[n, c, t]] += dout[n, c, t]
    return dx_arr


def hdc_retrain_epoch(double[:, ::1] C, const double[:, ::1] H, const double[::1] hnorm,
                      const cnp.int64_t[::1] labels, const cnp.int64_t[::1] order, double eta):
    cdef int J = C.shape[0], D = C.shape[1]
    cdef Py_ssize_t N = order.shape[0]
    cdef double[::1] cnorm = np.empty(J)
    cdef int one = 1
    cdef Py_ssize_t i, m
    cdef int j, y, best
    cdef double dot, den, sim, best_sim, neg_eta = -eta
    cdef long updates = 0
    with nogil:
        for j in range(J):
            cnorm[j] = sqrt(ddot(&D, &C[j, 0], &one, &C[j, 0], &one))
        for i in range(N):
            m = order[i]
            y = <int>labels[m]
            best = 0
            best_sim = -INFINITY
            for j in range(J):
                dot = ddot(&D, &C[j, 0], &one, <double *>&H[m, 0], &one)
                den = hnorm[m] * cnorm[j]
                sim = dot / den if den > 0.0 else 0.0
                if sim > best_sim:
                    best_sim = sim
                    best = j
            if best != y:
                daxpy(&D, &eta, <double *>&H[m, 0], &one, &C[y, 0], &one)
                daxpy(&D, &neg_eta, <double *>&H[m, 0], &one, &C[best, 0], &one)
                cnorm[y] = sqrt(ddot(&D, &C[y, 0], &one, &C[y, 0], &one))
                cnorm[best] = sqrt(ddot(&D, &C[best, 0], &one, &C[best, 0], &one))
                updates += 1
    return updates
