"""Compare the compiled and pure-Python QP backends.

Usage: python3 bench/benchmark_qp.py [--repeat R]

Solves the same QPs with each available backend and reports the median wall
time, iteration counts and the largest objective difference between them.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np
import scipy.sparse as sp

from moclqr.model import load_scenario, with_overrides
from moclqr.cli import resolve_scenario
from moclqr.qp import HAVE_COMPILED, QpProblem, solve_qp
from moclqr.qp.linsys import BACKENDS
from moclqr.solver import RegionAssignment, TreeQP


def random_qp(n: int, m: int, seed: int) -> QpProblem:
    rng = np.random.default_rng(seed)
    # sparse data, as in the trajectory-tree QPs
    M = sp.random(n, n, density=3.0 / n, random_state=rng)
    P = (M @ M.T + 1e-2 * sp.eye(n)).tocsc()
    A = sp.random(m, n, density=4.0 / n, random_state=rng, format="csc")
    x = rng.standard_normal(n)
    Ax = A @ x
    return QpProblem(P, rng.standard_normal(n), A, Ax - rng.random(m), Ax + rng.random(m))


def tree_qp(name: str, nb: int) -> QpProblem:
    spec = with_overrides(load_scenario(resolve_scenario(name)), Nb=nb)
    tq = TreeQP(spec)
    regs = [0] * len(tq.slots)
    return tq.assemble(RegionAssignment(tq.slots, tuple(regs))).qp


def iteration_kernel(prob: QpProblem, backend: str, niter: int = 1000) -> tuple:
    """Setup time and per-iteration time of the ADMM loop on a fixed factorisation."""
    n, m = prob.A.shape[1], prob.A.shape[0]
    rho = np.full(m, 0.1)
    t0 = time.perf_counter()
    kkt = BACKENDS[backend](prob.P.tocsc(), prob.A.tocsc(), 1e-6, rho)
    setup = time.perf_counter() - t0
    x, z, y, dy = np.zeros(n), np.zeros(m), np.zeros(m), np.zeros(m)
    l = np.where(np.isfinite(prob.l), prob.l, -1e20)
    u = np.where(np.isfinite(prob.u), prob.u, 1e20)
    t0 = time.perf_counter()
    kkt.iterate(prob.q, l, u, x, z, y, dy, niter, 1.6)
    return setup, (time.perf_counter() - t0) / niter


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = ["compiled", "python"] if HAVE_COMPILED else ["python"]
    cases = [
        ("random n=200 m=300", random_qp(200, 300, 0)),
        ("random n=2000 m=3000", random_qp(2000, 3000, 1)),
        ("scenario1 Nb=30", tree_qp("scenario1_p085", 30)),
        ("scenario1 Nb=12", tree_qp("scenario1_p085", 12)),
    ]
    print(f"{'case':24s} {'backend':9s} {'median_s':>10s} {'iters':>7s} {'status':>10s}")
    for label, prob in cases:
        objs = {}
        for be in backends:
            times = []
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                sol = solve_qp(prob, backend=be)
                times.append(time.perf_counter() - t0)
            objs[be] = sol.objective
            print(f"{label:24s} {be:9s} {statistics.median(times):10.4f} {sol.iterations:7d} "
                  f"{sol.status:>10s}")
        if len(objs) == 2:
            a, b = objs.values()
            print(f"{'':24s} objective difference {abs(a - b) / max(1.0, abs(a)):.2e}")
    print()
    print(f"{'ADMM loop only':24s} {'backend':9s} {'setup_s':>10s} {'us/iter':>10s}")
    for label, prob in cases:
        for be in backends:
            setup, per = iteration_kernel(prob, be)
            print(f"{label:24s} {be:9s} {setup:10.4f} {per * 1e6:10.1f}")


if __name__ == "__main__":
    main()
