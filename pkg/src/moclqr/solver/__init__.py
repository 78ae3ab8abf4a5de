from .assembly import (AssignmentError, RegionAssignment, Slot, TrajectoryTree, TreeQP,
                       WeightTable, build_tree, make_slots, weight_table)
from .bnb import (BudgetExceeded, GuardExceeded, InfeasibleError, PreconditionError, Solution,
                  SolverConfig, SolverError, enumerate_oracle, lower_bound,
                  solve_convex_constant_obs, solve_micp)
from .evaluate import evaluate_cost


def assemble_fixed_assignment_qp(spec, topology, assignment, **kw):
    """QP (with its weight table and constant offset) for a complete assignment."""
    if not assignment.complete:
        raise AssignmentError("assignment must be complete")
    tq = TreeQP(spec, topology)
    return tq.assemble(assignment, **kw)


__all__ = [
    "RegionAssignment", "Slot", "TrajectoryTree", "TreeQP", "WeightTable", "build_tree",
    "make_slots", "weight_table", "Solution", "SolverConfig", "SolverError", "InfeasibleError",
    "BudgetExceeded", "GuardExceeded", "PreconditionError", "AssignmentError", "solve_micp",
    "solve_convex_constant_obs", "enumerate_oracle", "lower_bound", "evaluate_cost",
    "assemble_fixed_assignment_qp",
]
