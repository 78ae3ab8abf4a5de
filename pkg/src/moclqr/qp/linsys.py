"""KKT linear-system backends for the ADMM engine.

Two interchangeable implementations of the same interface:

``CompiledKKT``
    LDL^T factorisation and the ADMM iteration loop in the Cython
    extension ``moclqr.qp._kernel``.
``PythonKKT``
    SuperLU factorisation from scipy and the loop written with numpy.

The backend is chosen at import: the compiled one when the extension is
importable, unless ``MOCLQR_BACKEND=python`` is set.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    from . import _kernel
except ImportError:  # extension not built
    _kernel = None

HAVE_COMPILED = _kernel is not None


def kkt_matrix(P: sp.csc_matrix, A: sp.csc_matrix, sigma: float, rho: np.ndarray) -> sp.csc_matrix:
    """Full symmetric ``[[P + sigma I, A^T], [A, -diag(1/rho)]]``."""
    n = P.shape[0]
    K = sp.bmat([[P + sigma * sp.eye(n, format="csc"), A.T],
                 [A, sp.diags(-1.0 / rho)]], format="csc")
    K.sum_duplicates()
    return K


def fill_reducing_order(K: sp.csc_matrix) -> np.ndarray:
    """Symmetric minimum-degree ordering of K (via SuperLU's MMD on A^T + A)."""
    pattern = K.copy()
    pattern.data = np.abs(pattern.data) + 1.0
    n = K.shape[0]
    pattern = pattern + sp.eye(n, format="csc") * (n + 1.0)
    lu = spla.splu(pattern.tocsc(), permc_spec="MMD_AT_PLUS_A",
                   options={"SymmetricMode": True}, diag_pivot_thresh=0.0)
    return np.asarray(lu.perm_c, dtype=np.int64)


class PythonKKT:
    name = "python"

    def __init__(self, P, A, sigma, rho):
        self.P, self.A = P, A
        self.n, self.m = A.shape[1], A.shape[0]
        self.sigma = sigma
        self.update_rho(rho)

    def update_rho(self, rho):
        self.rho = np.asarray(rho, dtype=float).copy()
        self.rho_inv = 1.0 / self.rho
        self._lu = spla.splu(kkt_matrix(self.P, self.A, self.sigma, self.rho))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(rhs, dtype=float))

    def iterate(self, q, l, u, x, z, y, dy, niter: int, alpha: float):
        n = self.n
        rho, rho_inv, sigma = self.rho, self.rho_inv, self.sigma
        rhs = np.empty(n + self.m)
        for _ in range(niter):
            rhs[:n] = sigma * x - q
            rhs[n:] = z - rho_inv * y
            s = self._lu.solve(rhs)
            zt = z + rho_inv * (s[n:] - y)
            x *= 1.0 - alpha
            x += alpha * s[:n]
            zr = alpha * zt + (1.0 - alpha) * z
            np.clip(zr + rho_inv * y, l, u, out=z)
            dy[:] = rho * (zr - z)
            y += dy


class CompiledKKT:
    name = "compiled"

    def __init__(self, P, A, sigma, rho):
        self.P, self.A = P, A
        self.n, self.m = A.shape[1], A.shape[0]
        self.sigma = sigma
        self.rho = np.asarray(rho, dtype=float).copy()
        self.rho_inv = 1.0 / self.rho
        K = kkt_matrix(P, A, sigma, self.rho)
        nm = self.n + self.m
        self.perm = fill_reducing_order(K)
        self.pinv = np.empty_like(self.perm)
        self.pinv[self.perm] = np.arange(nm, dtype=np.int64)
        Kp = sp.triu(K[self.perm][:, self.perm], format="csc")
        Kp.sort_indices()
        self.Ap = Kp.indptr.astype(np.int64)
        self.Ai = Kp.indices.astype(np.int64)
        self.Ax = Kp.data.astype(float)
        # locate the -1/rho diagonal entries so rho updates skip the rebuild
        cols = self.pinv[self.n:]
        self._rho_pos = np.empty(self.m, dtype=np.int64)
        for i, c in enumerate(cols):
            lo, hi = self.Ap[c], self.Ap[c + 1]
            k = lo + np.searchsorted(self.Ai[lo:hi], c)
            self._rho_pos[i] = k
        self.Lnz = np.empty(nm, dtype=np.int64)
        self.etree = np.empty(nm, dtype=np.int64)
        total = _kernel.ldl_etree(nm, self.Ap, self.Ai, self.Lnz, self.etree)
        if total < 0:
            raise ValueError("KKT pattern is not upper triangular with full diagonal")
        self.Lp = np.empty(nm + 1, dtype=np.int64)
        self.Li = np.empty(max(total, 1), dtype=np.int64)
        self.Lx = np.empty(max(total, 1))
        self.D = np.empty(nm)
        self.Dinv = np.empty(nm)
        self._work = np.empty(2 * nm)
        self._factor()

    def _factor(self):
        pos = _kernel.ldl_factor(self.n + self.m, self.Ap, self.Ai, self.Ax, self.Lp, self.Li,
                                 self.Lx, self.D, self.Dinv, self.Lnz, self.etree)
        if pos != self.n:
            raise np.linalg.LinAlgError(f"KKT matrix is not quasi-definite ({pos} positive pivots)")

    def update_rho(self, rho):
        self.rho = np.asarray(rho, dtype=float).copy()
        self.rho_inv = 1.0 / self.rho
        self.Ax[self._rho_pos] = -self.rho_inv
        self._factor()

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = np.ascontiguousarray(np.asarray(rhs, dtype=float)[self.perm])
        _kernel.ldl_solve(self.Lp, self.Li, self.Lx, self.Dinv, b)
        out = np.empty_like(b)
        out[self.perm] = b
        return out

    def iterate(self, q, l, u, x, z, y, dy, niter: int, alpha: float):
        _kernel.admm_iterate(niter, self.n, self.m, self.sigma, alpha, self.Lp, self.Li, self.Lx,
                             self.Dinv, self.perm, q, l, u, self.rho, self.rho_inv, x, z, y, dy,
                             self._work)


BACKENDS = {"python": PythonKKT}
if HAVE_COMPILED:
    BACKENDS["compiled"] = CompiledKKT


def default_backend() -> str:
    forced = os.environ.get("MOCLQR_BACKEND", "").strip().lower()
    if forced:
        if forced not in BACKENDS:
            raise RuntimeError(f"MOCLQR_BACKEND={forced!r} is not available; have {sorted(BACKENDS)}")
        return forced
    return "compiled" if HAVE_COMPILED else "python"


def get_backend(name: str | None = None):
    return BACKENDS[name or default_backend()]
