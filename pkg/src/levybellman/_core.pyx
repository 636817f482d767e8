# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled hot loop: Jacobi relaxation of the implicit Bellman step."""
import numpy as np
from libc.math cimport fabs, INFINITY


def bellman_max(const double[:, ::1] Q):
    """Column-wise max over controls (rows); ties go to the lowest row."""
    cdef Py_ssize_t m = Q.shape[0], n = Q.shape[1], a, i
    cdef double best
    cdef long long k
    out = np.empty(n)
    act = np.zeros(n, dtype=np.int64)
    cdef double[::1] o = out
    cdef long long[::1] ac = act
    for i in range(n):
        best = Q[0, i]
        k = 0
        for a in range(1, m):
            if Q[a, i] > best:
                best = Q[a, i]
                k = a
        o[i] = best
        ac[i] = k
    return out, act


def relax(const long long[::1] indptr, const long long[::1] indices, const double[::1] data,
          const double[::1] mass, const double[::1] b, const double[::1] uprev, double[::1] u,
          double dt, double eps, double tol, long long max_iter, long long m):
    """Iterate u <- u - eps * R(u) with
    R_i(u) = u_i - uprev_i + dt * max_a (b_ai - (S u)_ai + mass_ai u_i)
    over the stacked (m * n, n) CSR matrix S. Updates u in place."""
    cdef Py_ssize_t n = uprev.shape[0], i, a, row, p
    cdef long long it, k, done = -1
    cdef double s, q, best, R, res
    r_arr = np.empty(n)
    act = np.zeros(n, dtype=np.int64)
    hist = np.empty(max_iter + 1)
    cdef double[::1] r = r_arr
    cdef long long[::1] ac = act
    cdef double[::1] h = hist
    for it in range(max_iter + 1):
        res = 0.0
        for i in range(n):
            best = -INFINITY
            k = 0
            for a in range(m):
                row = a * n + i
                s = 0.0
                for p in range(indptr[row], indptr[row + 1]):
                    s += data[p] * u[indices[p]]
                q = b[row] - s + mass[row] * u[i]
                if q > best:
                    best = q
                    k = a
            R = u[i] - uprev[i] + dt * best
            r[i] = R
            ac[i] = k
            if fabs(R) > res:
                res = fabs(R)
        h[it] = res
        if res <= tol:
            done = it
            break
        if it == max_iter:
            break
        for i in range(n):
            u[i] -= eps * r[i]
    if done >= 0:
        return act, done, hist[:done + 1], True
    return act, max_iter, hist, False
