"""Goal-reaching checks and Monte-Carlo coverage of computed backward sets."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .backreach import BackreachResult, GoalSet
from .milp import LinExpr, MilpModel, ModelError, NormBall, Polytope, add_not_in_ball
from .solver import SolveOptions, check_feasible
from .system import NeuralFeedbackLoop

WITNESS_SLACK = 1e-9
# first pass keeps witnesses this far from every ball so they survive re-evaluation
ROBUST_MARGIN = 1e-6


class WitnessError(RuntimeError):
    """The solver returned a point that does not re-evaluate as a counterexample."""


@dataclass
class StartSet:
    """Polytope ``{x : C x <= d}`` of initial states, bounded and nonempty."""

    polytope: Polytope
    lo: np.ndarray = field(init=False)
    hi: np.ndarray = field(init=False)

    def __post_init__(self):
        P = self.polytope
        n = P.dim
        lo = np.empty(n)
        hi = np.empty(n)
        for i in range(n):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                c = np.zeros(n)
                c[i] = sign
                res = linprog(c, A_ub=P.A, b_ub=P.b, bounds=[(None, None)] * n, method="highs")
                if res.status == 2:
                    raise ModelError("start set is empty")
                if res.status == 3:
                    raise ModelError(f"start set is unbounded along coordinate {i}")
                if res.status != 0:
                    raise ModelError(f"could not bound the start set: {res.message}")
                out[i] = sign * res.fun
        self.lo, self.hi = lo, hi

    @classmethod
    def box(cls, lo, hi) -> StartSet:
        return cls(Polytope.box(lo, hi))

    @property
    def dim(self) -> int:
        return self.polytope.dim

    def contains(self, x, tol: float = 0.0):
        return self.polytope.contains(x, tol)

    def check_within(self, lo, hi, tol: float = 1e-9) -> None:
        if np.any(self.lo < np.asarray(lo) - tol) or np.any(self.hi > np.asarray(hi) + tol):
            raise ModelError(f"start set (box {self.lo.tolist()}..{self.hi.tolist()}) is not "
                             f"inside the domain {np.asarray(lo).tolist()}..{np.asarray(hi).tolist()}")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform points by rejection from the bounding box."""
        out = []
        have = 0
        while have < count:
            pts = rng.uniform(self.lo, self.hi, size=(max(2 * (count - have), 64), self.dim))
            pts = pts[self.contains(pts)]
            out.append(pts)
            have += len(pts)
        return np.concatenate(out)[:count]

    def to_dict(self) -> dict:
        return self.polytope.to_dict()

    @classmethod
    def from_dict(cls, d: Mapping) -> StartSet:
        return cls(Polytope.from_dict(d))


@dataclass
class CheckVerdict:
    subset: bool
    witness: np.ndarray | None
    n_balls: int
    n_binaries: int
    nodes: int
    wall_time: float
    # smallest (distance - radius) over the balls at the witness; 0 means a boundary point
    clearance: float | None = None

    @property
    def label(self) -> str:
        return "Subset" if self.subset else "NotSubset"

    def to_dict(self) -> dict:
        return {"verdict": self.label,
                "witness": None if self.witness is None else self.witness.tolist(),
                "clearance": self.clearance,
                "stats": {"balls": self.n_balls, "binaries": self.n_binaries,
                          "nodes": self.nodes, "wall_time": self.wall_time}}


def _outside_all(balls: Sequence[NormBall], x: np.ndarray, slack: float) -> bool:
    return all(b.distance(x)[0] >= b.radius - slack for b in balls)


def _search(start: StartSet, balls: Sequence[NormBall], inflate: float, opts: SolveOptions,
            solver):
    model = MilpModel()
    x = model.add_vars(start.lo, start.hi, prefix="x")
    P = start.polytope
    for a, b in zip(P.A, P.b):
        model.add_constraint(LinExpr.dot(a, x), "<=", float(b))
    bounds = list(zip(start.lo, start.hi))
    for ball in balls:
        grown = NormBall(ball.center, ball.radius + inflate, ball.p) if inflate else ball
        add_not_in_ball(model, x, grown, bounds)
    out = check_feasible(model, opts, solver)
    point = np.array([out[v] for v in x]) if out.feasible else None
    return point, model.num_binaries, out.solution.stats.nodes


def check_goal_reaching(start: StartSet, result: BackreachResult,
                        opts: SolveOptions | None = None, solver=None) -> CheckVerdict:
    """Decide whether every state of ``start`` lies in the union of the stored balls.

    Subset is only reported when the start set avoids the complement of every
    ball's interior, which is slightly stronger than closed-ball coverage: a
    start set sharing boundary with the union can come back NotSubset with a
    witness of zero clearance. A counterexample is first sought at a small
    distance outside every ball, so that it re-evaluates cleanly; if none
    exists the exact problem decides.
    """
    t0 = time.perf_counter()
    opts = opts or SolveOptions()
    balls = [b for _, b in result.all_balls()]
    if not balls:
        raise ModelError("result holds no balls; nothing to check against")
    if start.dim != result.dim:
        raise ModelError(f"start set has dimension {start.dim}, result has {result.dim}")
    nodes = 0
    binaries = 0
    for inflate in (ROBUST_MARGIN, 0.0):
        point, binaries, n = _search(start, balls, inflate, opts, solver)
        nodes += n
        if point is None:
            continue
        # clamp rounding noise on the box-bounded coordinates before re-evaluating
        point = np.clip(point, start.lo, start.hi)
        if not (start.contains(point, WITNESS_SLACK)[0]
                and _outside_all(balls, point, WITNESS_SLACK)):
            if inflate:
                continue
            raise WitnessError(f"solver witness {point.tolist()} is inside a ball or outside "
                               f"the start set on direct re-evaluation")
        clearance = min(float(b.distance(point)[0] - b.radius) for b in balls)
        return CheckVerdict(False, point, len(balls), binaries, nodes,
                            time.perf_counter() - t0, max(clearance, 0.0))
    return CheckVerdict(True, None, len(balls), binaries, nodes, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# coverage


def in_union(balls: Sequence[NormBall], x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    hit = np.zeros(len(x), dtype=bool)
    for b in balls:
        hit |= b.contains(x)
    return hit


@dataclass
class CoverageReport:
    n_samp: int
    n_samples: int
    seed: int
    accepted: list[int]
    covered: list[int]
    union_accepted: int
    union_covered: int

    @staticmethod
    def _ratio(num: int, den: int) -> float | None:
        return num / den if den else None

    @property
    def fractions(self) -> list[float | None]:
        return [self._ratio(c, a) for c, a in zip(self.covered, self.accepted)]

    @property
    def union_fraction(self) -> float | None:
        return self._ratio(self.union_covered, self.union_accepted)

    @property
    def undefined_steps(self) -> list[int]:
        return [t + 1 for t, a in enumerate(self.accepted) if a == 0]

    def to_dict(self) -> dict:
        return {"n_samp": self.n_samp, "samples_per_step": self.n_samples, "seed": self.seed,
                "steps": [{"t": t + 1, "accepted": a, "covered": c, "fraction": f,
                           "undefined": a == 0}
                          for t, (a, c, f) in enumerate(zip(self.accepted, self.covered,
                                                            self.fractions))],
                "union": {"accepted": self.union_accepted, "covered": self.union_covered,
                          "fraction": self.union_fraction, "undefined": self.union_accepted == 0}}

    @classmethod
    def from_dict(cls, d: Mapping) -> CoverageReport:
        steps = d["steps"]
        return cls(d["n_samp"], d["samples_per_step"], d["seed"],
                   [s["accepted"] for s in steps], [s["covered"] for s in steps],
                   d["union"]["accepted"], d["union"]["covered"])


def estimate_coverage(nfl: NeuralFeedbackLoop, goal: GoalSet, result: BackreachResult,
                      n_samples: int = 10_000, seed: int = 0) -> CoverageReport:
    """Fraction of sampled true backward-set members that the stored balls cover.

    For each step, ``n_samples`` uniform states in the domain are simulated
    with the true dynamics; those landing in the goal are the true members.
    The union column pools members from every step and tests them against
    all balls together.
    """
    if n_samples < 1:
        raise ValueError("coverage needs at least one sample per step")
    rng = np.random.default_rng(seed)
    lo, hi = nfl.domain_lo, nfl.domain_hi
    every = [b for _, b in result.all_balls()]
    accepted, covered, pool = [], [], []
    for step in result.steps:
        pts = rng.uniform(lo, hi, size=(n_samples, lo.size))
        members = pts[goal.contains(nfl.simulate(pts, step.t))]
        accepted.append(len(members))
        covered.append(int(in_union(step.balls, members).sum()) if len(members) else 0)
        pool.append(members)
    pooled = np.concatenate(pool) if pool else np.empty((0, lo.size))
    union_cov = int(in_union(every, pooled).sum()) if len(pooled) else 0
    n_samp = result.config.get("reach", {}).get("n_samp", 0)
    return CoverageReport(int(n_samp), n_samples, seed, accepted, covered, len(pooled), union_cov)


def coverage_csv(reports: Sequence[CoverageReport]) -> str:
    """One row per run, one column per step plus the union; empty cells are undefined."""
    k = max((len(r.accepted) for r in reports), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_samp"] + [f"t{t}" for t in range(1, k + 1)] + ["union"])

    def cell(f):
        return "undefined" if f is None else f"{f:.6f}"

    for r in reports:
        fr = r.fractions + [None] * (k - len(r.fractions))
        w.writerow([r.n_samp] + [cell(f) for f in fr] + [cell(r.union_fraction)])
    return buf.getvalue()
