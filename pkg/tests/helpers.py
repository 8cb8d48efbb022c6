"""Small constructors shared by several test modules."""

import math

import numpy as np

from ubreach.backreach import BackreachResult, BallRecord, StepResult
from ubreach.milp import NormBall, Polytope


def result_from_balls(steps, lo, hi, goal=None, n_samp=1):
    """BackreachResult holding ``steps``: a list (per t) of (center, radius, p) tuples."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    goal = goal if goal is not None else Polytope.box(lo, hi)
    out = []
    for t, balls in enumerate(steps, start=1):
        recs = [BallRecord(NormBall(np.asarray(c, float), r, p), r, r, "Optimal")
                for c, r, p in balls]
        out.append(StepResult(t, recs))
    return BackreachResult(out, {"reach": {"n_samp": n_samp}}, goal, (lo, hi), "test")


INF = math.inf
