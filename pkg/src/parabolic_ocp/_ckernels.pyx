# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Jacobi-preconditioned CG and per-bin maxima.

Both functions mirror ``_pykernels`` exactly in algorithm and stopping rule.
"""
import numpy as np
from libc.math cimport sqrt, fabs


def pcg_csr(const int[::1] indptr, const int[::1] indices, const double[::1] data,
            const double[::1] shift, const double[::1] b, double[::1] x,
            double rtol, int maxiter):
    """Solve ``(C + diag(shift)) x = b`` in place; ``C`` is CSR.

    Returns ``(iterations, relative_residual, status)`` with status 0 on
    convergence, 1 on iteration budget exhaustion, 2 on a non-positive
    curvature breakdown (matrix not SPD).
    """
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t i, jj
    cdef int it = 0, status = 1
    cdef double bnorm = 0.0, rz, rz_new, pq, alpha, beta, rnorm, acc, d
    r_arr = np.empty(n)
    z_arr = np.empty(n)
    p_arr = np.empty(n)
    q_arr = np.empty(n)
    w_arr = np.empty(n)
    cdef double[::1] r = r_arr, z = z_arr, p = p_arr, q = q_arr, winv = w_arr

    with nogil:
        for i in range(n):
            d = shift[i]
            for jj in range(indptr[i], indptr[i + 1]):
                if indices[jj] == i:
                    d = d + data[jj]
            if d > 0.0:
                winv[i] = 1.0 / d
            else:
                winv[i] = 1.0
            bnorm += b[i] * b[i]
        bnorm = sqrt(bnorm)
    if bnorm == 0.0:
        for i in range(n):
            x[i] = 0.0
        return 0, 0.0, 0

    with nogil:
        rz = 0.0
        rnorm = 0.0
        for i in range(n):
            acc = shift[i] * x[i]
            for jj in range(indptr[i], indptr[i + 1]):
                acc = acc + data[jj] * x[indices[jj]]
            r[i] = b[i] - acc
            z[i] = winv[i] * r[i]
            p[i] = z[i]
            rz += r[i] * z[i]
            rnorm += r[i] * r[i]
        rnorm = sqrt(rnorm)
        if rnorm <= rtol * bnorm:
            status = 0
        while status != 0 and it < maxiter:
            pq = 0.0
            for i in range(n):
                acc = shift[i] * p[i]
                for jj in range(indptr[i], indptr[i + 1]):
                    acc = acc + data[jj] * p[indices[jj]]
                q[i] = acc
                pq += p[i] * acc
            if pq <= 0.0:
                status = 2
                break
            alpha = rz / pq
            rz_new = 0.0
            rnorm = 0.0
            for i in range(n):
                x[i] += alpha * p[i]
                r[i] -= alpha * q[i]
                z[i] = winv[i] * r[i]
                rz_new += r[i] * z[i]
                rnorm += r[i] * r[i]
            rnorm = sqrt(rnorm)
            it += 1
            if rnorm <= rtol * bnorm:
                status = 0
                break
            beta = rz_new / rz
            rz = rz_new
            for i in range(n):
                p[i] = z[i] + beta * p[i]
    return it, rnorm / bnorm, status


def bin_maxima(const long[::1] bins, const double[::1] inc, const double[::1] dist,
               int nbins):
    """Per-bin maximum increment, distance at the argmax, and pair count.

    Ties in the increment go to the pair with the smaller distance.
    """
    cdef Py_ssize_t m = bins.shape[0], k
    cdef long bidx
    best_arr = np.full(nbins, -1.0)
    bd_arr = np.zeros(nbins)
    cnt_arr = np.zeros(nbins, dtype=np.int64)
    cdef double[::1] best = best_arr, bdist = bd_arr
    cdef long long[::1] cnt = cnt_arr
    with nogil:
        for k in range(m):
            bidx = bins[k]
            if bidx < 0 or bidx >= nbins:
                continue
            cnt[bidx] += 1
            if inc[k] > best[bidx] or (inc[k] == best[bidx] and dist[k] < bdist[bidx]):
                best[bidx] = inc[k]
                bdist[bidx] = dist[k]
    return best_arr, bd_arr, cnt_arr
