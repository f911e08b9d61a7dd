# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled time-marching and kernel-correlation loops.

Mirrors ``_fallback`` exactly; see there for the argument conventions.
"""

import numpy as np
from libc.math cimport fabs, isfinite
from scipy.linalg.cython_lapack cimport dpbtrs

cdef enum:
    OK = 0
    NONFINITE = 1
    GROWTH = 2


cdef inline void _csr_residual(
        const double[::1] kdata, const long long[::1] kind, const long long[::1] kptr,
        const double[::1] bdata, const long long[::1] bind, const long long[::1] bptr,
        const double[:, ::1] sig, double[:, ::1] x, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t nc = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t i, j, c, col
    cdef double v
    for c in range(nc):
        for i in range(n):
            out[c, i] = 0.0
    for i in range(n):
        for j in range(bptr[i], bptr[i + 1]):
            col = bind[j]
            v = bdata[j]
            for c in range(nc):
                out[c, i] += v * sig[col, c]
        for j in range(kptr[i], kptr[i + 1]):
            col = kind[j]
            v = kdata[j]
            for c in range(nc):
                out[c, i] -= v * x[c, col]


cdef inline void _sample(const double[::1] pdata, const long long[::1] pind, const long long[::1] pptr,
                         double[:, ::1] x, double[:, ::1] rec) noexcept nogil:
    cdef Py_ssize_t nc = x.shape[0], nr = rec.shape[1]
    cdef Py_ssize_t r, j, c
    for c in range(nc):
        for r in range(nr):
            rec[c, r] = 0.0
    for r in range(nr):
        for j in range(pptr[r], pptr[r + 1]):
            for c in range(nc):
                rec[c, r] += pdata[j] * x[c, pind[j]]


cdef inline double _absmax(double[:, ::1] x) noexcept nogil:
    cdef Py_ssize_t i, c
    cdef double m = 0.0, a
    for c in range(x.shape[0]):
        for i in range(x.shape[1]):
            a = fabs(x[c, i])
            if not (a <= m):  # also catches NaN
                m = a
    return m


def _csr_parts(mat):
    mat = mat.tocsr()
    return (np.ascontiguousarray(mat.data, dtype=np.float64),
            np.ascontiguousarray(mat.indices, dtype=np.int64),
            np.ascontiguousarray(mat.indptr, dtype=np.int64))


def march(cb, k_csr, b_csr, signals, p_csr, u0, v0, double dt, Py_ssize_t nsteps,
          Py_ssize_t stride, bint store, double growth_limit=1e6):
    cdef double[::1, :] cbv = np.asfortranarray(cb, dtype=np.float64)
    cdef const double[::1] kdata, bdata, pdata
    cdef const long long[::1] kind, kptr, bind, bptr, pind, pptr
    kdata, kind, kptr = _csr_parts(k_csr)
    bdata, bind, bptr = _csr_parts(b_csr)
    pdata, pind, pptr = _csr_parts(p_csr)
    sig_arr = np.ascontiguousarray(signals, dtype=np.float64)
    cdef const double[:, :, ::1] sig = sig_arr

    cdef Py_ssize_t nc = u0.shape[0], n = u0.shape[1], nr = p_csr.shape[0]
    cdef Py_ssize_t nstore = nsteps // stride + 1
    rec_arr = np.zeros((nsteps + 1, nc, nr))
    hist_arr = np.empty((nstore, nc, n)) if store else np.empty((1, nc, n))
    cdef double[:, :, ::1] rec = rec_arr
    cdef double[:, :, ::1] hist = hist_arr

    cdef double[:, ::1] u_prev = np.array(u0, dtype=np.float64, order="C")
    cdef double[:, ::1] vel = np.array(v0, dtype=np.float64, order="C")
    cdef double[:, ::1] u = np.zeros((nc, n))
    cdef double[:, ::1] acc = np.zeros((nc, n))
    cdef double[:, ::1] tmp

    cdef char uplo = b'L'
    cdef int n_ = <int>n, kd = <int>(cbv.shape[0] - 1), nrhs = <int>nc
    cdef int ldab = <int>cbv.shape[0], ldb = <int>n, info = 0
    cdef double dt2 = dt * dt, amax, baseline
    cdef Py_ssize_t warm = max(10, nsteps // 10)
    cdef Py_ssize_t k, i, c
    cdef int status = OK
    cdef Py_ssize_t failed = -1

    with nogil:
        baseline = _absmax(u_prev)
        _sample(pdata, pind, pptr, u_prev, rec[0])
        if store:
            hist[0, :, :] = u_prev
        if nsteps > 0:
            _csr_residual(kdata, kind, kptr, bdata, bind, bptr, sig[0], u_prev, acc)
            dpbtrs(&uplo, &n_, &kd, &nrhs, &cbv[0, 0], &ldab, &acc[0, 0], &ldb, &info)
            for c in range(nc):
                for i in range(n):
                    u[c, i] = u_prev[c, i] + dt * vel[c, i] + 0.5 * dt2 * acc[c, i]
            k = 1
            while k <= nsteps and info == 0:
                amax = _absmax(u)
                if not isfinite(amax):
                    status = NONFINITE
                    failed = k
                    break
                if k <= warm:
                    if amax > baseline:
                        baseline = amax
                elif baseline > 0.0 and amax > growth_limit * baseline:
                    status = GROWTH
                    failed = k
                    break
                _sample(pdata, pind, pptr, u, rec[k])
                if store and k % stride == 0:
                    hist[k // stride, :, :] = u
                if k == nsteps:
                    break
                _csr_residual(kdata, kind, kptr, bdata, bind, bptr, sig[k], u, acc)
                dpbtrs(&uplo, &n_, &kd, &nrhs, &cbv[0, 0], &ldab, &acc[0, 0], &ldb, &info)
                # u_prev <- u_next, then swap so u holds the newest state
                for c in range(nc):
                    for i in range(n):
                        u_prev[c, i] = 2.0 * u[c, i] - u_prev[c, i] + dt2 * acc[c, i]
                tmp = u_prev
                u_prev = u
                u = tmp
                k += 1
    if info != 0:
        raise RuntimeError(f"dpbtrs failed with info={info}")
    return status, failed, rec_arr, (hist_arr if store else None)


def correlate(fwd, adj, conn, weights, bint difference):
    cdef const double[:, :, ::1] U = np.ascontiguousarray(fwd, dtype=np.float64)
    cdef const double[:, :, ::1] A = np.ascontiguousarray(adj, dtype=np.float64)
    cdef const long long[:, ::1] cn = np.ascontiguousarray(conn, dtype=np.int64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t nt = U.shape[0], nc = U.shape[1]
    cdef Py_ssize_t ne = cn.shape[0], nloc = cn.shape[1]
    out_arr = np.zeros((ne, nloc, nloc))
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] la = np.zeros(nloc)
    cdef double[::1] lu = np.zeros(nloc)
    cdef Py_ssize_t last = nt - 1 if difference else nt
    cdef Py_ssize_t t, c, e, a, b, na
    cdef double wt, s
    with nogil:
        for t in range(last):
            wt = w[t]
            if wt == 0.0:
                continue
            for c in range(nc):
                for e in range(ne):
                    for a in range(nloc):
                        na = cn[e, a]
                        if difference:
                            la[a] = wt * (A[t + 1, c, na] - A[t, c, na])
                            lu[a] = U[t + 1, c, na] - U[t, c, na]
                        else:
                            la[a] = wt * A[t, c, na]
                            lu[a] = U[t, c, na]
                    for a in range(nloc):
                        s = la[a]
                        for b in range(nloc):
                            out[e, a, b] += s * lu[b]
    return out_arr
