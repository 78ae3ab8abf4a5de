"""Operator-splitting (ADMM) solver for convex QPs

    minimize    0.5 x'Px + q'x
    subject to  l <= A x <= u

with Ruiz equilibration, adaptive step size, primal-infeasibility
certificates and active-set polishing. Optimality is reported only when the
KKT residuals of the returned point are below the requested tolerance:

* primal: ``||Ax - proj_[l,u](Ax + y)||_inf / (1 + ||Ax||_inf)`` (feasibility,
  complementarity and multiplier signs in one quantity)
* dual:   ``||Px + q + A'y||_inf / (1 + max(||Px||, ||A'y||, ||q||))``
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linsys import get_backend

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal-infeasible"
MAX_ITERATIONS = "max-iterations"

_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_RHO_EQ_FACTOR = 1e3
_SCALE_MIN = 1e-4
_SCALE_MAX = 1e4


@dataclass
class QpProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.P = sp.csc_matrix(self.P, dtype=float)
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        n = self.q.size
        m = self.l.size
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape != (m, n) or self.u.size != m:
            raise ValueError("constraint dimensions are inconsistent")
        if np.any(self.l > self.u):
            raise ValueError("l <= u violated")
        asym = abs(self.P - self.P.T)
        if asym.nnz and asym.max() > 1e-12 * max(1.0, abs(self.P).max()):
            raise ValueError("P is not symmetric")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.l.size

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    objective: float
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int = 0
    polished: bool = False
    certificate: Optional[np.ndarray] = None
    infeasibility: float = 0.0
    solve_time: float = 0.0
    backend: str = ""
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(prob: QpProblem, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    Ax = prob.A @ x
    Px = prob.P @ x
    Aty = prob.A.T @ y
    nat = Ax - np.clip(Ax + y, prob.l, prob.u) if prob.m else np.zeros(0)
    rp = _inf(nat) / (1.0 + _inf(Ax))
    rd = _inf(Px + prob.q + Aty) / (1.0 + max(_inf(Px), _inf(Aty), _inf(prob.q)))
    return rp, rd


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


class _Scaled:
    """Ruiz-equilibrated copy of the problem: Ps = c D P D, As = E A D."""

    def __init__(self, prob: QpProblem, iters: int = 10):
        n, m = prob.n, prob.m
        P, A, q = prob.P.copy(), prob.A.copy(), prob.q.copy()
        D = np.ones(n)
        E = np.ones(m)
        c = 1.0
        for _ in range(iters):
            colP = _col_inf(P)
            colA = _col_inf(A)
            norm_x = np.maximum(colP, colA)
            norm_c = _row_inf(A) if m else np.zeros(0)
            dt = 1.0 / np.sqrt(_limit(norm_x))
            et = 1.0 / np.sqrt(_limit(norm_c)) if m else np.zeros(0)
            Dt = sp.diags(dt)
            P = (Dt @ P @ Dt).tocsc()
            if m:
                A = (sp.diags(et) @ A @ Dt).tocsc()
            q = dt * q
            D *= dt
            E *= et
            mean_col = float(np.mean(_col_inf(P))) if n else 0.0
            gamma = max(mean_col, _inf(q))
            ct = 1.0 / _limit(np.array([gamma]))[0]
            P = P * ct
            q = q * ct
            c *= ct
        self.P, self.A, self.q = P.tocsc(), A.tocsc(), q
        self.D, self.E, self.c = D, E, c
        self.l = E * prob.l
        self.u = E * prob.u


def _limit(v: np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=float)
    v[v < _SCALE_MIN] = 1.0
    return np.minimum(v, _SCALE_MAX)


def _col_inf(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_inf(M: sp.csc_matrix) -> np.ndarray:
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _rho_vector(l, u, rho):
    r = np.full(l.size, rho)
    eq = np.abs(u - l) < 1e-12 * np.maximum(1.0, np.abs(l))
    free = np.isinf(l) & np.isinf(u)
    r[eq] = min(_RHO_EQ_FACTOR * rho, _RHO_MAX)
    r[free] = _RHO_MIN
    return r, eq, free


def _polish(prob, scaled, x, z, y, tol, attempts=8, delta=1e-9, refine=6):
    """Guess the active set from (z, y), solve the reduced KKT system and
    repair the guess a few times. Works on the unscaled problem."""
    A, P, q, l, u = prob.A, prob.P, prob.q, prob.l, prob.u
    n, m = prob.n, prob.m
    Ax = A @ x
    lower = (z - l < -y) | (np.abs(u - l) < 1e-12 * np.maximum(1.0, np.abs(l)))
    upper = (u - z < y) & ~lower
    lower &= np.isfinite(l)
    upper &= np.isfinite(u)
    best = None
    seen = set()
    for _ in range(attempts):
        key = (lower.tobytes(), upper.tobytes())
        if key in seen:
            break
        seen.add(key)
        act = np.flatnonzero(lower | upper)
        Aa = A[act]
        rhs_b = np.where(lower[act], l[act], u[act])
        # regularised reduced KKT in the scaled metric, refined against the exact one
        Ds = scaled.D
        Es = scaled.E[act]
        c = scaled.c
        Ps = (sp.diags(Ds) @ P @ sp.diags(Ds)) * c
        As = sp.diags(Es) @ Aa @ sp.diags(Ds)
        K0 = sp.bmat([[Ps, As.T], [As, None]], format="csc") if act.size else Ps.tocsc()
        K = K0 + sp.diags(np.concatenate([np.full(n, delta), np.full(act.size, -delta)]))
        try:
            lu = spla.splu(K.tocsc())
        except RuntimeError:
            return best
        rhs = np.concatenate([-c * Ds * q, Es * rhs_b])
        sol = lu.solve(rhs)
        for _ in range(refine):
            r = rhs - K0 @ sol
            if _inf(r) < 1e-15 * max(1.0, _inf(rhs)):
                break
            sol = sol + lu.solve(r)
        if not np.all(np.isfinite(sol)):
            return best
        xs = Ds * sol[:n]
        ys = np.zeros(m)
        ys[act] = Es * sol[n:] / c
        rp, rd = kkt_residuals(prob, xs, ys)
        if best is None or max(rp, rd) < max(best[2], best[3]):
            best = (xs, ys, rp, rd)
        if rp <= tol and rd <= tol:
            return best
        # repair: release wrong-sign multipliers, add violated bounds
        Ax = A @ xs
        scale = 1.0 + _inf(Ax)
        wrong_l = lower & (ys > 0) & ~(np.abs(u - l) < 1e-12 * np.maximum(1.0, np.abs(l)))
        wrong_u = upper & (ys < 0)
        viol_l = ~lower & (Ax < l - tol * scale)
        viol_u = ~upper & (Ax > u + tol * scale)
        if not (wrong_l.any() or wrong_u.any() or viol_l.any() or viol_u.any()):
            break
        lower = (lower & ~wrong_l) | viol_l
        upper = (upper & ~wrong_u) | viol_u
    return best


def solve_qp(prob: QpProblem, tol: float = 1e-8, max_iter: int = 200_000, *,
             rho: float = 0.1, sigma: float = 1e-6, alpha: float = 1.6,
             check_every: int = 25, polish: bool = True, eps_pinf: float = 1e-7,
             warm_x=None, warm_y=None, backend: Optional[str] = None) -> QpSolution:
    """Solve a convex QP. See the module docstring for the residual definitions."""
    t0 = time.perf_counter()
    kkt_cls = get_backend(backend)
    n, m = prob.n, prob.m
    sc = _Scaled(prob)
    x = np.zeros(n) if warm_x is None else np.asarray(warm_x, float) / sc.D
    y = np.zeros(m) if warm_y is None else np.asarray(warm_y, float) * sc.c / np.where(sc.E == 0, 1, sc.E)
    z = np.clip(sc.A @ x, sc.l, sc.u) if m else np.zeros(0)
    dy = np.zeros(m)
    rho_vec, eq, free = _rho_vector(sc.l, sc.u, rho)
    lin = kkt_cls(sc.P, sc.A, sigma, rho_vec)
    # ADMM accuracy ladder: polish early, tighten only if polishing fails
    eps_admm = max(tol, 1e-5)
    it = 0
    polished = False
    rho_updates = 0
    best = None

    def unscale(xs, zs, ys):
        return sc.D * xs, zs / np.where(sc.E == 0, 1, sc.E), sc.E * ys / sc.c

    def finish(status, xf, yf, **kw):
        rp, rd = kkt_residuals(prob, xf, yf)
        return QpSolution(x=xf, y=yf, objective=prob.objective(xf), status=status,
                          primal_residual=rp, dual_residual=rd, iterations=it,
                          solve_time=time.perf_counter() - t0, backend=lin.name, **kw)

    while it < max_iter:
        step = min(check_every, max_iter - it)
        lin.iterate(sc.q, sc.l, sc.u, x, z, y, dy, step, alpha)
        it += step
        xu, zu, yu = unscale(x, z, y)
        Ax = prob.A @ xu
        Px = prob.P @ xu
        Aty = prob.A.T @ yu
        r_prim = _inf(Ax - zu)
        r_dual = _inf(Px + prob.q + Aty)
        s_prim = max(_inf(Ax), _inf(zu))
        s_dual = max(_inf(Px), _inf(Aty), _inf(prob.q))
        if not (np.isfinite(r_prim) and np.isfinite(r_dual)):
            break
        # primal infeasibility certificate from the dual increment
        if m:
            dyu = sc.E * dy / sc.c
            dyu = np.where((dyu > 0) & np.isinf(prob.u), 0.0, dyu)
            dyu = np.where((dyu < 0) & np.isinf(prob.l), 0.0, dyu)
            ndy = _inf(dyu)
            if ndy > 1e-30:
                support = (np.where(dyu > 0, np.nan_to_num(prob.u, posinf=0.0), 0.0) @ dyu
                           + np.where(dyu < 0, np.nan_to_num(prob.l, neginf=0.0), 0.0) @ dyu)
                if (_inf(prob.A.T @ dyu) <= eps_pinf * ndy and support < -eps_pinf * ndy):
                    cert = dyu / ndy
                    sol = finish(PRIMAL_INFEASIBLE, xu, yu, certificate=cert,
                                 infeasibility=float(-support / ndy))
                    return sol
        admm_ok = (r_prim <= eps_admm * (1.0 + s_prim)) and (r_dual <= eps_admm * (1.0 + s_dual))
        if admm_ok:
            rp, rd = kkt_residuals(prob, xu, yu)
            if rp <= tol and rd <= tol:
                return finish(OPTIMAL, xu, yu)
            if polish:
                pol = _polish(prob, sc, xu, zu, yu, tol)
                if pol is not None:
                    if best is None or max(pol[2], pol[3]) < max(best[2], best[3]):
                        best = pol
                    if pol[2] <= tol and pol[3] <= tol:
                        polished = True
                        return finish(OPTIMAL, pol[0], pol[1], polished=True)
            if eps_admm <= tol:
                # converged at the target ADMM accuracy but KKT test still fails
                pass
            eps_admm = max(tol, eps_admm * 0.1)
        # adaptive step size
        num = r_prim / (s_prim + 1e-30)
        den = r_dual / (s_dual + 1e-30)
        if den > 0 and num > 0 and rho_updates < 50:
            ratio = math.sqrt(num / den)
            if ratio > 5.0 or ratio < 0.2:
                new_rho = np.clip(rho_vec * ratio, _RHO_MIN, _RHO_MAX)
                new_rho[free] = _RHO_MIN
                if not np.allclose(new_rho, lin.rho):
                    # y stays; ADMM iterates remain valid under a rho change
                    rho_vec = new_rho
                    lin.update_rho(rho_vec)
                    rho_updates += 1
    xu, zu, yu = unscale(x, z, y)
    if best is not None and max(best[2], best[3]) < max(*kkt_residuals(prob, xu, yu)):
        return finish(MAX_ITERATIONS, best[0], best[1], polished=polished)
    return finish(MAX_ITERATIONS, xu, yu)
