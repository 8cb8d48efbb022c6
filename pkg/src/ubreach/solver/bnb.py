"""Reference MILP solver: best-first branch-and-bound over dual simplex relaxations."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from ..milp.model import MilpModel, VarId
from . import lp as lpmod
from ._simplex_py import BUDGET, INFEASIBLE


class SolveStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    GAP_LIMIT = "GapLimit"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True)
class SolveOptions:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-6
    node_limit: int = 200_000
    time_limit: float = math.inf
    int_tol: float = 1e-6
    rel_gap: float = 0.0
    lp_iter_limit: int | None = None

    @classmethod
    def from_dict(cls, d: Mapping | None) -> SolveOptions:
        if not d:
            return cls()
        names = {"feasTol": "feas_tol", "gapTol": "gap_tol", "nodeLimit": "node_limit",
                 "timeLimit": "time_limit", "intTol": "int_tol", "relGap": "rel_gap"}
        kw = {names.get(k, k): v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"feasTol": self.feas_tol, "gapTol": self.gap_tol, "nodeLimit": self.node_limit,
                "timeLimit": None if math.isinf(self.time_limit) else self.time_limit,
                "intTol": self.int_tol, "relGap": self.rel_gap}


@dataclass
class SolveStats:
    nodes: int = 0
    lp_iterations: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {"nodes": self.nodes, "lp_iterations": self.lp_iterations,
                "wall_time": self.wall_time}


@dataclass
class Solution:
    status: SolveStatus
    objective_incumbent: float
    objective_bound: float
    assignment: np.ndarray | None
    stats: SolveStats = field(default_factory=SolveStats)

    @property
    def has_incumbent(self) -> bool:
        return self.assignment is not None

    def value(self, v: VarId) -> float:
        if self.assignment is None:
            raise ValueError(f"no assignment available (status {self.status.value})")
        return float(self.assignment[v.index])

    def __getitem__(self, v: VarId) -> float:
        return self.value(v)


@dataclass(frozen=True)
class Feasible:
    assignment: np.ndarray
    solution: Solution

    feasible = True

    def __getitem__(self, v: VarId) -> float:
        return float(self.assignment[v.index])


@dataclass(frozen=True)
class Infeasible:
    solution: Solution

    feasible = False


@dataclass(order=True)
class _Node:
    bound: float
    neg_depth: int
    seq: int
    parent_seq: int = field(compare=False)
    fixings: tuple | None = field(compare=False)  # linked list (parent_fixings, j, lo, hi)
    basis: tuple | None = field(compare=False)


def _apply_fixings(lb: np.ndarray, ub: np.ndarray, fixings) -> None:
    while fixings is not None:
        fixings, j, lo, hi = fixings
        lb[j] = lo
        ub[j] = hi


class ReferenceSolver:
    """In-repo simplex + branch-and-bound backend."""

    name = "reference"

    def solve(self, model: MilpModel, opts: SolveOptions, stop_at_first: bool = False) -> Solution:
        return _branch_and_bound(model, opts, stop_at_first)


def _branch_and_bound(model: MilpModel, opts: SolveOptions, stop_at_first: bool) -> Solution:
    t0 = time.perf_counter()
    model.check_ready()
    A, sense, rhs, lb0, ub0, is_bin, c, osense, c0 = model.to_arrays()
    flip = -1.0 if osense == "maximize" else 1.0
    if osense == "feasibility":
        c = np.zeros_like(c)
        stop_at_first = True
    cmin = flip * c
    stats = SolveStats()

    def finish(status, inc, bound, x):
        stats.wall_time = time.perf_counter() - t0
        if math.isfinite(inc):
            inc = flip * inc + c0
        elif osense == "maximize":
            inc = -inc
        if math.isfinite(bound):
            bound = flip * bound + c0
        elif osense == "maximize":
            bound = -bound
        return Solution(status, inc, bound, x, stats)

    bins = np.flatnonzero(is_bin)
    lb0 = lb0.copy()
    ub0 = ub0.copy()
    # binaries must keep integral bounds
    lb0[bins] = np.ceil(lb0[bins] - opts.int_tol)
    ub0[bins] = np.floor(ub0[bins] + opts.int_tol)
    if np.any(lb0 > ub0):
        return finish(SolveStatus.INFEASIBLE, math.inf, math.inf, None)
    lp = lpmod.DualSimplex(A, sense, rhs, lb0, ub0, cmin, feas_tol=opts.feas_tol)
    m, n = A.shape
    max_iter = opts.lp_iter_limit or max(2000, 50 * (m + n))

    heap: list[_Node] = [_Node(-math.inf, 0, 0, -1, None, None)]
    seq = 1
    incumbent = math.inf
    best_x = None
    pruned_min = math.inf
    last_solved = -2
    status = None
    lb = np.empty_like(lb0)
    ub = np.empty_like(ub0)

    while heap:
        node = heap[0]
        gap_ok = incumbent - node.bound <= opts.gap_tol
        if gap_ok:
            break
        if opts.rel_gap > 0 and math.isfinite(incumbent) and \
                incumbent - node.bound <= opts.rel_gap * abs(incumbent):
            status = SolveStatus.GAP_LIMIT
            break
        if stats.nodes >= opts.node_limit or time.perf_counter() - t0 > opts.time_limit:
            status = SolveStatus.ITER_LIMIT
            break
        heapq.heappop(heap)
        lb[:] = lb0
        ub[:] = ub0
        _apply_fixings(lb, ub, node.fixings)
        lp.set_structural_bounds(lb, ub)
        if node.parent_seq != last_solved and node.basis is not None:
            lp.restore(node.basis)
        it0 = lp.iterations
        code = lp.solve(max_iter)
        stats.lp_iterations += lp.iterations - it0
        stats.nodes += 1
        last_solved = node.seq
        if code == INFEASIBLE:
            continue
        if code == BUDGET:
            heapq.heappush(heap, node)
            status = SolveStatus.ITER_LIMIT
            break
        obj = max(lp.objective_bound(), node.bound)
        if obj >= incumbent - opts.gap_tol:
            pruned_min = min(pruned_min, obj)
            continue
        xs = lp.structural()
        frac = np.abs(xs[bins] - np.round(xs[bins]))
        if bins.size == 0 or frac.max() <= opts.int_tol:
            snap = lp.snapshot() if bins.size else None
            cand = _polish(lp, lb, ub, bins, xs, max_iter, stats)
            last_solved = -2
            if cand is not None:
                val, xfull = cand
                if val < incumbent:
                    incumbent, best_x = val, xfull
                if stop_at_first and best_x is not None:
                    return finish(SolveStatus.OPTIMAL, incumbent, incumbent, best_x)
                if val <= obj + opts.gap_tol or frac.max() == 0.0:
                    continue
            elif frac.max() == 0.0:
                continue
            # rounding broke feasibility or lost objective: keep branching on the
            # near-integral binaries
            lp.set_structural_bounds(lb, ub)
            lp.restore(snap)
        # most fractional binary; argmax picks the lowest index on ties
        closeness = 0.5 - np.abs(frac - 0.5)
        k = int(np.argmax(closeness))
        j = int(bins[k])
        snap = lp.snapshot()
        up_first = xs[j] >= 0.5
        order = ((1.0, 1.0), (0.0, 0.0)) if up_first else ((0.0, 0.0), (1.0, 1.0))
        for lo_j, hi_j in order:
            heapq.heappush(heap, _Node(obj, node.neg_depth - 1, seq, node.seq,
                                       (node.fixings, j, lo_j, hi_j), snap))
            seq += 1

    open_min = min((nd.bound for nd in heap), default=math.inf)
    bound = min(incumbent, pruned_min, open_min)
    if status is None:
        if best_x is None:
            return finish(SolveStatus.INFEASIBLE, math.inf, math.inf, None)
        status = SolveStatus.OPTIMAL
    return finish(status, incumbent, bound, best_x)


def _polish(lp: lpmod.DualSimplex, lb, ub, bins, xs, max_iter, stats):
    """Fix near-integral binaries exactly and re-solve the continuous part."""
    if bins.size == 0:
        return lp.objective(), xs
    r = np.round(xs[bins])
    plb = lb.copy()
    pub = ub.copy()
    plb[bins] = r
    pub[bins] = r
    lp.set_structural_bounds(plb, pub)
    it0 = lp.iterations
    code = lp.solve(max_iter)
    stats.lp_iterations += lp.iterations - it0
    if code != 0:
        return None
    return lp.objective(), lp.structural()


_DEFAULT = ReferenceSolver()


def solve(model: MilpModel, opts: SolveOptions | None = None, solver=None) -> Solution:
    """Solve ``model`` to proven optimality or report a proven bound at a limit."""
    opts = opts or SolveOptions()
    return (solver or _DEFAULT).solve(model, opts)


def check_feasible(model: MilpModel, opts: SolveOptions | None = None, solver=None):
    """Feasibility-only solve that stops at the first integral point."""
    opts = opts or SolveOptions()
    work = model
    if model.objective_sense != "feasibility":
        work = model.copy()
        work.set_objective(0.0, "feasibility")
    sol = (solver or _DEFAULT).solve(work, opts, stop_at_first=True)
    if sol.assignment is not None:
        return Feasible(sol.assignment, sol)
    if sol.status == SolveStatus.INFEASIBLE:
        return Infeasible(sol)
    raise SolverLimitError(f"feasibility undecided: solver stopped with status {sol.status.value}",
                           sol)


class SolverLimitError(RuntimeError):
    def __init__(self, msg: str, solution: Solution):
        super().__init__(msg)
        self.solution = solution
