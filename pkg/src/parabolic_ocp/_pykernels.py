"""Pure-Python/NumPy versions of the compiled kernels in ``_ckernels.pyx``."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def pcg_csr(indptr, indices, data, shift, b, x, rtol, maxiter):
    n = b.shape[0]
    C = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    d = C.diagonal() + shift
    winv = np.where(d > 0.0, 1.0 / np.where(d > 0.0, d, 1.0), 1.0)
    bnorm = np.sqrt(b @ b)
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0, 0
    r = b - (C @ x + shift * x)
    z = winv * r
    p = z.copy()
    rz = r @ z
    rnorm = np.sqrt(r @ r)
    if rnorm <= rtol * bnorm:
        return 0, rnorm / bnorm, 0
    it, status = 0, 1
    while it < maxiter:
        q = C @ p + shift * p
        pq = p @ q
        if pq <= 0.0:
            status = 2
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = winv * r
        rz_new = r @ z
        rnorm = np.sqrt(r @ r)
        it += 1
        if rnorm <= rtol * bnorm:
            status = 0
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    return it, rnorm / bnorm, status


def bin_maxima(bins, inc, dist, nbins):
    keep = (bins >= 0) & (bins < nbins)
    bins, inc, dist = bins[keep], inc[keep], dist[keep]
    best = np.full(nbins, -1.0)
    bdist = np.zeros(nbins)
    cnt = np.bincount(bins, minlength=nbins).astype(np.int64)
    if bins.size:
        # largest increment per bin, ties resolved towards the smaller distance
        order = np.lexsort((dist, -inc, bins))
        first = np.ones(order.size, dtype=bool)
        first[1:] = bins[order[1:]] != bins[order[:-1]]
        sel = order[first]
        best[bins[sel]] = inc[sel]
        bdist[bins[sel]] = dist[sel]
    return best, bdist, cnt
