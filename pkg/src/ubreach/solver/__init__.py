"""MILP solving: reference branch-and-bound plus an external-command backend."""

from .bnb import (Feasible, Infeasible, ReferenceSolver, Solution, SolveOptions, SolveStats,
                  SolveStatus, SolverLimitError, check_feasible, solve)
from .external import ExternalSolver, ExternalSolverError
from .lp import NumericalError, available_backends, set_backend

__all__ = [
    "ExternalSolver", "ExternalSolverError", "Feasible", "Infeasible", "NumericalError", "ReferenceSolver", "Solution", "SolveOptions",
    "SolveStats", "SolveStatus", "SolverLimitError", "available_backends", "check_feasible",
    "set_backend", "solve",
]
