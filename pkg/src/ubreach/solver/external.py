"""Drive an outside MILP solver through LP files and the plain-text solution format.

The command is a list of arguments; ``{lp}`` and ``{solution}`` are replaced
by the model and result file paths, ``{timeLimit}`` and ``{gapTol}`` by the
solve options. The solver must write the solution file before exiting.
"""

from __future__ import annotations

import math
import subprocess
import tempfile
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from ..milp.lpformat import lp_names, read_solution, write_lp
from ..milp.model import MilpModel
from .bnb import Solution, SolveOptions, SolveStats, SolveStatus


class ExternalSolverError(RuntimeError):
    pass


_STATUS = {s.value.lower(): s for s in SolveStatus}


class ExternalSolver:
    name = "external"

    def __init__(self, command: Sequence[str], timeout: float | None = None):
        if not command:
            raise ValueError("external solver needs a command")
        self.command = list(command)
        self.timeout = timeout

    def _argv(self, lp: Path, sol: Path, opts: SolveOptions) -> list[str]:
        fields = {"lp": str(lp), "solution": str(sol), "gapTol": repr(opts.gap_tol),
                  "timeLimit": "inf" if math.isinf(opts.time_limit) else repr(opts.time_limit)}
        return [arg.format(**fields) for arg in self.command]

    def solve(self, model: MilpModel, opts: SolveOptions, stop_at_first: bool = False) -> Solution:
        t0 = time.perf_counter()
        model.check_ready()
        with tempfile.TemporaryDirectory(prefix="ubreach-") as tmp:
            lp = Path(tmp) / "model.lp"
            sol = Path(tmp) / "model.sol"
            write_lp(model, lp)
            argv = self._argv(lp, sol, opts)
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise ExternalSolverError(f"could not run {argv[0]!r}: {exc}") from exc
            if proc.returncode != 0:
                raise ExternalSolverError(f"{argv[0]!r} exited with {proc.returncode}: "
                                          f"{proc.stderr.strip()[-500:]}")
            if not sol.exists():
                raise ExternalSolverError(f"{argv[0]!r} wrote no solution file")
            status_text, objective, bound, values = read_solution(sol)
        status = _STATUS.get(status_text.lower())
        if status is None:
            raise ExternalSolverError(f"unknown solution status {status_text!r}")
        stats = SolveStats(wall_time=time.perf_counter() - t0)
        if status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
            inf = math.inf if status == SolveStatus.INFEASIBLE else -math.inf
            if model.objective_sense == "maximize":
                inf = -inf
            return Solution(status, inf, inf, None, stats)
        x = None
        if values:
            names = lp_names(model)
            missing = [nm for nm in names if nm not in values]
            if missing:
                raise ExternalSolverError(f"solution misses {len(missing)} variables, "
                                          f"e.g. {missing[0]!r}")
            x = np.array([values[nm] for nm in names])
            viol = model.max_violation(x, opts.int_tol)
            if viol > 10 * opts.feas_tol:
                raise ExternalSolverError(f"external assignment violates the model by {viol:.3g}")
            if objective is None:
                objective = model.objective.value(x)
        if objective is None:
            objective = math.inf if model.objective_sense != "maximize" else -math.inf
        if bound is None:
            # without a reported bound only an optimal status proves anything
            if status == SolveStatus.OPTIMAL:
                bound = objective - opts.gap_tol if model.objective_sense != "maximize" \
                    else objective + opts.gap_tol
            else:
                bound = -math.inf if model.objective_sense != "maximize" else math.inf
        return Solution(status, float(objective), float(bound), x, stats)
