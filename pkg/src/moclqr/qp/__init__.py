from .admm import (MAX_ITERATIONS, OPTIMAL, PRIMAL_INFEASIBLE, QpProblem, QpSolution,
                   kkt_residuals, solve_qp)
from .linsys import BACKENDS, HAVE_COMPILED, default_backend

__all__ = ["QpProblem", "QpSolution", "solve_qp", "kkt_residuals", "OPTIMAL",
           "PRIMAL_INFEASIBLE", "MAX_ITERATIONS", "BACKENDS", "HAVE_COMPILED", "default_backend"]
