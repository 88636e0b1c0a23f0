# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled PHA kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, pow, fabs, isfinite, INFINITY

cnp.import_array()

EXPONENTIAL = 0
POWER = 1
LOGARITHMIC = 2


def aggregate(const double[:, ::1] U, const long[:, ::1] bundle_ids,
              const long[::1] n_bundles, const double[::1] rho, int n):
    cdef Py_ssize_t S = U.shape[0], nT = U.shape[1], T = nT // n
    cdef Py_ssize_t t, s, k, b, nb_max = 0
    for t in range(T):
        if n_bundles[t] > nb_max:
            nb_max = n_bundles[t]
    out_arr = np.empty((S, nT))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] sums = np.zeros((nb_max, n))
    cdef double[::1] mass = np.zeros(nb_max)
    for t in range(T):
        for b in range(n_bundles[t]):
            mass[b] = 0.0
            for k in range(n):
                sums[b, k] = 0.0
        for s in range(S):
            b = bundle_ids[t, s]
            mass[b] += rho[s]
            for k in range(n):
                sums[b, k] += rho[s] * U[s, t * n + k]
        for s in range(S):
            b = bundle_ids[t, s]
            for k in range(n):
                out[s, t * n + k] = sums[b, k] / mass[b]
    return out_arr


def multiplier_step(const double[:, ::1] W, const double[:, ::1] U,
                    const double[:, ::1] U_hat, const double[:, ::1] U_hat_old,
                    const double[::1] rho, double alpha):
    cdef Py_ssize_t S = U.shape[0], d = U.shape[1], s, k
    W_arr = np.empty((S, d))
    cdef double[:, ::1] W_new = W_arr
    cdef double metric = 0.0, du2, dw2, diff, dw
    cdef double inv_a2 = 1.0 / (alpha * alpha)
    for s in range(S):
        du2 = 0.0
        dw2 = 0.0
        for k in range(d):
            W_new[s, k] = W[s, k] + alpha * (U[s, k] - U_hat[s, k])
            dw = W_new[s, k] - W[s, k]
            diff = U_hat[s, k] - U_hat_old[s, k]
            du2 += diff * diff
            dw2 += dw * dw
        metric += rho[s] * (du2 + dw2 * inv_a2)
    return W_arr, metric


def batched_matvec(const double[:, :, ::1] M, const double[:, ::1] x):
    cdef Py_ssize_t S = M.shape[0], r = M.shape[1], c = M.shape[2], s, i, j
    out_arr = np.empty((S, r))
    cdef double[:, ::1] out = out_arr
    cdef double acc
    for s in range(S):
        for i in range(r):
            acc = 0.0
            for j in range(c):
                acc += M[s, i, j] * x[s, j]
            out[s, i] = acc
    return out_arr


cdef inline void _marginal(double y, int kind, double a, double b,
                           double* d1, double* d2) nogil:
    cdef double base
    if kind == 0:
        d1[0] = exp(-y / a) / a
        d2[0] = -d1[0] / a
    elif kind == 2:
        base = a + b * y
        d1[0] = 1.0 / base
        d2[0] = -1.0 / (base * base)
    else:
        base = a + b * y
        d1[0] = pow(base, -1.0 / b)
        d2[0] = -d1[0] / base


def hara_root(beta0_in, kappa_in, int kind, double a, double b,
              double tol=1e-13, int max_iter=200):
    cdef const double[::1] beta0 = np.ascontiguousarray(beta0_in, dtype=float)
    cdef const double[::1] kappa = np.ascontiguousarray(kappa_in, dtype=float)
    cdef Py_ssize_t S = beta0.shape[0], s
    y_arr = np.array(beta0, dtype=float)
    cdef double[::1] y = y_arr
    cdef double lo, hi, yy, y_new, h, d1, d2, edge = 0.0
    cdef int it, worst = 0
    if kind != 0:
        edge = -a / b
        if b < 0:
            for s in range(S):
                if beta0[s] >= edge:
                    raise ValueError("utility domain violated: no root below a + b*y = 0")
    for s in range(S):
        if kappa[s] == 0.0:
            continue
        lo = -INFINITY
        hi = INFINITY
        yy = beta0[s]
        if kind != 0:
            if b > 0:
                lo = edge
                if yy <= edge:
                    yy = edge + 1.0
            else:
                hi = edge
        it = 0
        while it < max_iter:
            it += 1
            _marginal(yy, kind, a, b, &d1, &d2)
            h = yy - beta0[s] - kappa[s] * d1
            if h < 0:
                lo = yy
            else:
                hi = yy
            y_new = yy - h / (1.0 - kappa[s] * d2)
            if not isfinite(y_new) or y_new <= lo or y_new >= hi:
                if isfinite(hi):
                    y_new = 0.5 * (lo + hi)
                else:
                    y_new = lo + 2.0 * fabs(yy - lo) + 1.0
            if fabs(y_new - yy) <= tol * (fabs(yy) if fabs(yy) > 1.0 else 1.0):
                yy = y_new
                break
            yy = y_new
        y[s] = yy
        if it > worst:
            worst = it
    return y_arr, worst
