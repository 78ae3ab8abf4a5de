"""Mixed-observable constrained LQR: trajectory-tree planning under a partially
observed goal, solved as a mixed-integer convex program."""

__version__ = "0.1.0"
