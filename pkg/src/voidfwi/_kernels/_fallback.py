"""Pure NumPy/SciPy versions of the compiled kernels.

Same signatures and results as ``_core``; used when the extension is not
built. All state arrays are laid out ``(n_columns, n_nodes)``.
"""

import numpy as np
from scipy.linalg import lapack

OK = 0
NONFINITE = 1
GROWTH = 2


def march(cb, k_csr, b_csr, signals, p_csr, u0, v0, dt, nsteps, stride, store,
          growth_limit=1e6):
    """Central-difference time marching in a fixed node ordering.

    Parameters
    ----------
    cb : (kd + 1, n) lower band Cholesky factor of the mass matrix.
    k_csr : stiffness matrix (CSR).
    b_csr : (n, n_loads) load matrix; the force at step k is ``b @ signals[k]``.
    signals : (nsteps + 1, n_loads, n_columns)
    p_csr : (n_receivers, n) sampling matrix.
    u0, v0 : (n_columns, n) initial displacement and velocity.

    Returns
    -------
    status, failed_step, recordings (nsteps + 1, n_columns, n_receivers),
    history (n_stored, n_columns, n) or None.
    """
    nc, n = u0.shape
    nr = p_csr.shape[0]
    rec = np.zeros((nsteps + 1, nc, nr))
    nstore = nsteps // stride + 1
    hist = np.empty((nstore, nc, n)) if store else None
    dt2 = dt * dt
    k_csr = k_csr.tocsr()
    b_csr = b_csr.tocsr()
    p_csr = p_csr.tocsr()

    def solve(rhs):
        x, info = lapack.dpbtrs(cb, rhs.T, lower=1)
        if info != 0:
            raise RuntimeError(f"dpbtrs failed with info={info}")
        return x.T

    def residual(k, x):
        f = (b_csr @ signals[k]).T if signals.shape[1] else 0.0
        return f - (k_csr @ x.T).T

    u_prev = np.array(u0, dtype=float)
    warm = max(10, nsteps // 10)
    baseline = float(np.abs(u_prev).max()) if u_prev.size else 0.0

    rec[0] = (p_csr @ u_prev.T).T
    if store:
        hist[0] = u_prev
    if nsteps == 0:
        return OK, -1, rec, hist
    acc = solve(residual(0, u_prev))
    u = u_prev + dt * v0 + 0.5 * dt2 * acc
    for k in range(1, nsteps + 1):
        amax = float(np.abs(u).max()) if u.size else 0.0
        if not np.isfinite(amax):
            return NONFINITE, k, rec, hist
        if k <= warm:
            baseline = max(baseline, amax)
        elif baseline > 0.0 and amax > growth_limit * baseline:
            return GROWTH, k, rec, hist
        rec[k] = (p_csr @ u.T).T
        if store and k % stride == 0:
            hist[k // stride] = u
        if k == nsteps:
            break
        acc = solve(residual(k, u))
        u_next = 2.0 * u - u_prev + dt2 * acc
        u_prev, u = u, u_next
    return OK, -1, rec, hist


def correlate(fwd, adj, conn, weights, difference):
    """Per-element time correlation ``sum_t w_t a_e(t) (x) u_e(t)``, summed over columns.

    With ``difference`` the factors are forward differences in time
    ``x(t + 1) - x(t)`` and ``weights`` has one entry fewer than the
    number of stored steps.
    """
    nt = fwd.shape[0]
    ne, nloc = conn.shape
    out = np.zeros((ne, nloc, nloc))
    nc = fwd.shape[1]
    chunk = max(1, int(4e6 // max(1, nc * ne * nloc)))
    last = nt - 1 if difference else nt
    for t0 in range(0, last, chunk):
        t1 = min(last, t0 + chunk)
        if difference:
            a = adj[t0 + 1:t1 + 1][:, :, conn] - adj[t0:t1][:, :, conn]
            u = fwd[t0 + 1:t1 + 1][:, :, conn] - fwd[t0:t1][:, :, conn]
        else:
            a = adj[t0:t1][:, :, conn]
            u = fwd[t0:t1][:, :, conn]
        out += np.einsum("t,tcea,tceb->eab", weights[t0:t1], a, u, optimize=True)
    return out
