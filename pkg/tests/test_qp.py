import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from moclqr.qp import (BACKENDS, HAVE_COMPILED, OPTIMAL, PRIMAL_INFEASIBLE, QpProblem,
                       default_backend, kkt_residuals, solve_qp)

TOL = 1e-8


def active_set_oracle(P, q, G, g):
    """min 1/2 x'Px + q'x s.t. Gx <= g by enumerating active sets (P positive definite)."""
    n, m = P.shape[0], G.shape[0]
    best = np.inf
    for size in range(min(n, m) + 1):
        for S in itertools.combinations(range(m), size):
            S = list(S)
            K = np.block([[P, G[S].T], [G[S], np.zeros((size, size))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-q, g[S]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(G @ x <= g + 1e-9) and np.all(lam >= -1e-9):
                best = min(best, 0.5 * x @ P @ x + q @ x)
    return best


def random_pd_qp(rng, n, m):
    M = rng.standard_normal((n, n))
    P = M @ M.T / n + 0.1 * np.eye(n)
    q = 3 * rng.standard_normal(n)
    G = rng.standard_normal((m, n))
    g = G @ rng.standard_normal(n) + rng.uniform(0.0, 1.0, m)
    return P, q, G, g


def test_clipped_scalar():
    prob = QpProblem(sp.csc_matrix([[2.0]]), [-2.0], sp.csc_matrix([[1.0]]), [-np.inf], [0.0])
    sol = solve_qp(prob)
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(0.0, abs=1e-8)
    # (x - 1)^2 = x^2 - 2x + 1
    assert sol.objective + 1.0 == pytest.approx(1.0, abs=1e-8)


def test_unconstrained_stationarity():
    rng = np.random.default_rng(0)
    P, q, _, _ = random_pd_qp(rng, 8, 0)
    prob = QpProblem(P, q, sp.csc_matrix((0, 8)), [], [])
    sol = solve_qp(prob)
    assert sol.status == OPTIMAL
    assert np.max(np.abs(P @ sol.x + q)) <= TOL * (1 + np.max(np.abs(q)))
    np.testing.assert_allclose(sol.x, -np.linalg.solve(P, q), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("seed", range(50))
def test_random_qp_matches_active_set_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(1, 21))
    m = int(rng.integers(1, 11))
    P, q, G, g = random_pd_qp(rng, n, m)
    prob = QpProblem(P, q, G, np.full(m, -np.inf), g)
    sol = solve_qp(prob)
    assert sol.status == OPTIMAL
    ref = active_set_oracle(P, q, G, g)
    assert abs(sol.objective - ref) <= 1e-5 * max(1.0, abs(ref))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 20), st.integers(0, 40))
def test_optimal_status_carries_small_kkt_residuals(seed, n, m):
    rng = np.random.default_rng(seed)
    P, q, G, _ = random_pd_qp(rng, n, m)
    # two-sided rows around a known feasible point, some of them equalities
    Gx = G @ rng.standard_normal(n)
    lo, hi = Gx - rng.uniform(0.0, 2.0, m), Gx + rng.uniform(0.0, 2.0, m)
    lo[: m // 5] = hi[: m // 5] = Gx[: m // 5]
    prob = QpProblem(P, q, G, lo, hi)
    sol = solve_qp(prob, tol=TOL)
    assert sol.status == OPTIMAL
    rp, rd = kkt_residuals(prob, sol.x, sol.y)
    assert rp <= TOL and rd <= TOL
    assert sol.primal_residual <= TOL and sol.dual_residual <= TOL


def test_infeasible_returns_certificate():
    # x1 + x2 >= 3 and x1, x2 in [0, 1]
    A = sp.csc_matrix([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    prob = QpProblem(sp.eye(2), [0.0, 0.0], A, [3.0, 0.0, 0.0], [np.inf, 1.0, 1.0])
    sol = solve_qp(prob)
    assert sol.status == PRIMAL_INFEASIBLE
    y = sol.certificate
    assert y is not None and sol.infeasibility > 0
    # Farkas: A'y = 0 and u'y+ + l'y- < 0
    assert np.max(np.abs(A.T @ y)) <= 1e-6 * np.max(np.abs(y))
    support = np.where(y > 0, np.where(np.isfinite(prob.u), prob.u, 0.0) * y,
                       np.where(np.isfinite(prob.l), prob.l, 0.0) * y).sum()
    assert support < 0


def test_problem_validation():
    with pytest.raises(ValueError, match="symmetric"):
        QpProblem(np.array([[1.0, 1.0], [0.0, 1.0]]), [0, 0], sp.csc_matrix((0, 2)), [], [])
    with pytest.raises(ValueError, match="l <= u"):
        QpProblem(np.eye(1), [0], np.eye(1), [1.0], [0.0])


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernel not built")
@pytest.mark.parametrize("seed", range(10))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    P, q, G, g = random_pd_qp(rng, 15, 30)
    prob = QpProblem(P, q, G, g - 1.0, g)
    a = solve_qp(prob, backend="compiled")
    b = solve_qp(prob, backend="python")
    assert a.status == b.status == OPTIMAL
    assert abs(a.objective - b.objective) <= 1e-8 * max(1.0, abs(a.objective))


def test_backend_env_override():
    code = "from moclqr.qp import default_backend; print(default_backend())"
    env = dict(os.environ, MOCLQR_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
    env["MOCLQR_BACKEND"] = "fortran"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "not available" in out.stderr
    assert set(BACKENDS) >= {"python"}
    assert default_backend() in BACKENDS
