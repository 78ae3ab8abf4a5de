# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ADMM core: sparse LDL^T of the quasi-definite KKT matrix and
the fixed-matrix ADMM iteration loop."""

import numpy as np

ctypedef long long idx_t

cdef idx_t UNUSED = 0
cdef idx_t USED = 1


def ldl_etree(idx_t n, const idx_t[::1] Ap, const idx_t[::1] Ai,
              idx_t[::1] Lnz, idx_t[::1] etree):
    """Elimination tree and column counts of an upper-triangular CSC matrix.

    Returns the total number of nonzeros in L, or -1 if the pattern is not
    upper triangular or a column lacks its diagonal entry.
    """
    cdef idx_t[::1] work = np.empty(n, dtype=np.int64)
    cdef idx_t total
    with nogil:
        total = _etree(n, Ap, Ai, Lnz, etree, work)
    return total


cdef idx_t _etree(idx_t n, const idx_t[::1] Ap, const idx_t[::1] Ai,
                  idx_t[::1] Lnz, idx_t[::1] etree, idx_t[::1] work) noexcept nogil:
    cdef idx_t i, j, p, total = 0
    for i in range(n):
        work[i] = 0
        Lnz[i] = 0
        etree[i] = -1
    for j in range(n):
        if Ap[j] == Ap[j + 1]:
            return -1
        work[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                return -1
            while work[i] != j:
                if etree[i] == -1:
                    etree[i] = j
                Lnz[i] += 1
                work[i] = j
                i = etree[i]
    for i in range(n):
        total += Lnz[i]
    return total


def ldl_factor(idx_t n, const idx_t[::1] Ap, const idx_t[::1] Ai, const double[::1] Ax,
               idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx,
               double[::1] D, double[::1] Dinv,
               const idx_t[::1] Lnz, const idx_t[::1] etree):
    """Numeric LDL^T factorisation (up-looking). Returns the number of
    positive pivots, or -1 on a zero pivot."""
    cdef idx_t[::1] y_markers = np.zeros(n, dtype=np.int64)
    cdef idx_t[::1] y_idx = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] elim = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] next_space = np.empty(n, dtype=np.int64)
    cdef double[::1] y_vals = np.zeros(n, dtype=np.float64)
    cdef idx_t positive
    with nogil:
        positive = _factor(n, Ap, Ai, Ax, Lp, Li, Lx, D, Dinv, Lnz, etree,
                           y_markers, y_idx, elim, next_space, y_vals)
    return positive


cdef idx_t _factor(idx_t n, const idx_t[::1] Ap, const idx_t[::1] Ai, const double[::1] Ax,
                   idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx,
                   double[::1] D, double[::1] Dinv,
                   const idx_t[::1] Lnz, const idx_t[::1] etree,
                   idx_t[::1] y_markers, idx_t[::1] y_idx, idx_t[::1] elim,
                   idx_t[::1] next_space, double[::1] y_vals) noexcept nogil:
    cdef idx_t i, j, k, p, bidx, next_idx, nnz_y, nnz_e, cidx, tmp_idx
    cdef idx_t positive = 0
    cdef double yv
    Lp[0] = 0
    for i in range(n):
        Lp[i + 1] = Lp[i] + Lnz[i]
        next_space[i] = Lp[i]
        D[i] = 0.0
    # column 0 holds only its diagonal
    D[0] = Ax[Ap[0]]
    if D[0] == 0.0:
        return -1
    if D[0] > 0.0:
        positive += 1
    Dinv[0] = 1.0 / D[0]
    for k in range(1, n):
        nnz_y = 0
        for p in range(Ap[k], Ap[k + 1]):
            bidx = Ai[p]
            if bidx == k:
                D[k] = Ax[p]
                continue
            y_vals[bidx] = Ax[p]
            next_idx = bidx
            if y_markers[next_idx] == UNUSED:
                y_markers[next_idx] = USED
                elim[0] = next_idx
                nnz_e = 1
                next_idx = etree[bidx]
                while next_idx != -1 and next_idx < k:
                    if y_markers[next_idx] == USED:
                        break
                    y_markers[next_idx] = USED
                    elim[nnz_e] = next_idx
                    nnz_e += 1
                    next_idx = etree[next_idx]
                while nnz_e:
                    nnz_e -= 1
                    y_idx[nnz_y] = elim[nnz_e]
                    nnz_y += 1
        for i in range(nnz_y - 1, -1, -1):
            cidx = y_idx[i]
            tmp_idx = next_space[cidx]
            yv = y_vals[cidx]
            for j in range(Lp[cidx], tmp_idx):
                y_vals[Li[j]] -= Lx[j] * yv
            Li[tmp_idx] = k
            Lx[tmp_idx] = yv * Dinv[cidx]
            D[k] -= yv * Lx[tmp_idx]
            next_space[cidx] += 1
            y_vals[cidx] = 0.0
            y_markers[cidx] = UNUSED
        if D[k] == 0.0:
            return -1
        if D[k] > 0.0:
            positive += 1
        Dinv[k] = 1.0 / D[k]
    return positive


cdef inline void _ldl_solve(idx_t n, const idx_t[::1] Lp, const idx_t[::1] Li,
                            const double[::1] Lx, const double[::1] Dinv,
                            double[::1] x) noexcept nogil:
    cdef idx_t i, j
    cdef double xi
    for i in range(n):
        xi = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            x[Li[j]] -= Lx[j] * xi
    for i in range(n):
        x[i] *= Dinv[i]
    for i in range(n - 1, -1, -1):
        xi = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            xi -= Lx[j] * x[Li[j]]
        x[i] = xi


def ldl_solve(const idx_t[::1] Lp, const idx_t[::1] Li, const double[::1] Lx,
              const double[::1] Dinv, double[::1] x):
    """Solve L D L^T s = x in place (x is already permuted)."""
    cdef idx_t n = x.shape[0]
    with nogil:
        _ldl_solve(n, Lp, Li, Lx, Dinv, x)


def admm_iterate(int niter, idx_t n, idx_t m, double sigma, double alpha,
                 const idx_t[::1] Lp, const idx_t[::1] Li, const double[::1] Lx,
                 const double[::1] Dinv, const idx_t[::1] perm,
                 const double[::1] q, const double[::1] l, const double[::1] u,
                 const double[::1] rho, const double[::1] rho_inv,
                 double[::1] x, double[::1] z, double[::1] y, double[::1] dy,
                 double[::1] work):
    """Run ``niter`` relaxed ADMM steps in place. ``dy`` receives the last
    dual increment; ``work`` must hold at least ``2 * (n + m)`` doubles."""
    cdef idx_t nm = n + m
    cdef double[::1] b = work[:nm]
    cdef double[::1] s = work[nm:2 * nm]
    cdef idx_t i, pi
    cdef int it
    cdef double xt, zt, zr, znew, ynew
    with nogil:
        for it in range(niter):
            for i in range(nm):
                pi = perm[i]
                if pi < n:
                    b[i] = sigma * x[pi] - q[pi]
                else:
                    b[i] = z[pi - n] - rho_inv[pi - n] * y[pi - n]
            _ldl_solve(nm, Lp, Li, Lx, Dinv, b)
            for i in range(nm):
                s[perm[i]] = b[i]
            for i in range(n):
                xt = s[i]
                x[i] = alpha * xt + (1.0 - alpha) * x[i]
            for i in range(m):
                zt = z[i] + rho_inv[i] * (s[n + i] - y[i])
                zr = alpha * zt + (1.0 - alpha) * z[i]
                znew = zr + rho_inv[i] * y[i]
                if znew < l[i]:
                    znew = l[i]
                elif znew > u[i]:
                    znew = u[i]
                ynew = y[i] + rho[i] * (zr - znew)
                dy[i] = ynew - y[i]
                y[i] = ynew
                z[i] = znew
