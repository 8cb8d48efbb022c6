"""Solve a CPLEX-LP file with the in-repo solver and write the plain-text solution.

Usage: python3 scripts/solve_lp_file.py MODEL.lp SOLUTION.txt [TIME_LIMIT]

Handy as a stand-in external solver command when testing the file-based backend.
"""

import math
import sys

from ubreach.milp import lp_names, read_lp, write_solution
from ubreach.solver import SolveOptions, solve


def main(argv):
    model = read_lp(argv[1])
    limit = float(argv[3]) if len(argv) > 3 else math.inf
    sol = solve(model, SolveOptions(time_limit=limit))
    values = {}
    if sol.assignment is not None:
        values = dict(zip(lp_names(model), sol.assignment.tolist()))
    objective = sol.objective_incumbent if math.isfinite(sol.objective_incumbent) else None
    bound = sol.objective_bound if math.isfinite(sol.objective_bound) else None
    write_solution(argv[2], sol.status.value, values, objective, bound)


if __name__ == "__main__":
    main(sys.argv)
