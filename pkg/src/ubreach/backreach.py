"""Underapproximate backward reachable sets as unions of norm balls.

For each horizon ``t`` and each sampled center ``x_d`` (a state whose true
``t``-step image lies in the goal), solve

    minimize eps  s.t.  ||x - x_d||_p <= eps,  x in D,
                        x_0 = abstracted t-step rollout of x,  x_0 outside int G

and keep ``Ball(x_d, eps)``: every point closer than the smallest escaping
point reaches the goal under every branch of the abstraction, hence under the
true dynamics. The stored radius is the solver's proved lower bound on the
optimum, so early termination only shrinks balls.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .milp.encode import add_norm_le, add_not_in_interior
from .milp.model import LinExpr, MilpModel, ModelError, NormBall, Polytope, _norm_order
from .solver import SolveOptions, SolveStatus, solve
from .system import EnvelopeSet, NeuralFeedbackLoop, encode_rollout, propagate_bounds

log = logging.getLogger(__name__)

MAX_SOBOL_DIM = 16
DEFAULT_REJECTION_CAP = 100_000
RESULT_FORMAT = "ubreach-backreach/1"


class RejectionCapError(RuntimeError):
    """No accepted center within the draw budget."""


# ---------------------------------------------------------------------------
# sampling


class SobolSampler:
    """Unscrambled Sobol points in ``[0, 1)^n`` mapped affinely onto a box.

    Point ``i`` depends only on ``(n, i)``; ``index`` counts points consumed.
    """

    def __init__(self, lo, hi, index: int = 0):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        n = self.lo.size
        if not 1 <= n <= MAX_SOBOL_DIM:
            raise ValueError(f"Sobol sampler supports 1..{MAX_SOBOL_DIM} dimensions, got {n}")
        self.dim = n
        self.index = index
        self._engine = qmc.Sobol(n, scramble=False)

    def unit_points(self, start: int, count: int) -> np.ndarray:
        self._engine.reset()
        if start:
            self._engine.fast_forward(start)
        with warnings.catch_warnings():
            # balance warnings for non power-of-two batches are irrelevant here
            warnings.simplefilter("ignore", UserWarning)
            return self._engine.random(count)

    def points(self, start: int, count: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * self.unit_points(start, count)


@dataclass(frozen=True)
class GoalSet:
    polytope: Polytope

    def __post_init__(self):
        P = self.polytope
        res = linprog(np.zeros(P.dim), A_ub=P.A, b_ub=P.b, bounds=[(None, None)] * P.dim,
                      method="highs")
        if res.status == 2:
            raise ModelError("goal set is empty")

    @classmethod
    def box(cls, lo, hi) -> GoalSet:
        return cls(Polytope.box(lo, hi))

    def contains(self, x, tol: float = 0.0):
        return self.polytope.contains(x, tol)


def sample_center(sampler: SobolSampler, goal: GoalSet, nfl: NeuralFeedbackLoop, t: int,
                  cap: int = DEFAULT_REJECTION_CAP, batch: int = 256) -> np.ndarray:
    """Next Sobol point whose true ``t``-step image lies in the goal; advances the sampler."""
    if cap < 1:
        raise ValueError("rejection cap must be at least 1")
    drawn = 0
    while drawn < cap:
        count = min(batch, cap - drawn)
        pts = sampler.points(sampler.index, count)
        ok = np.flatnonzero(goal.contains(nfl.simulate(pts, t)))
        if ok.size:
            j = int(ok[0])
            sampler.index += j + 1
            return pts[j]
        sampler.index += count
        drawn += count
    raise RejectionCapError(
        f"no state among {cap} draws reaches the goal in {t} steps; the backward set at "
        f"t={t} is empty or tiny relative to the domain")


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class ReachConfig:
    k: int
    n_samp: int
    p: float = math.inf
    rel_tol: float = 1e-6
    rejection_cap: int = DEFAULT_REJECTION_CAP
    solver: SolveOptions = field(default_factory=SolveOptions)
    heuristic_samples: int = 2048
    probes: int = 6

    def __post_init__(self):
        if self.k < 1:
            raise ModelError(f"horizon k must be >= 1, got {self.k}")
        if self.n_samp < 1:
            raise ModelError(f"n_samp must be >= 1, got {self.n_samp}")
        if self.rejection_cap < 1:
            raise ModelError(f"rejectionCap must be >= 1, got {self.rejection_cap}")
        if self.probes < 0:
            raise ModelError(f"probes must be >= 0, got {self.probes}")
        if not self.rel_tol > 0:
            raise ModelError(f"relTol must be positive, got {self.rel_tol}")
        object.__setattr__(self, "p", _norm_order(self.p))

    def to_dict(self) -> dict:
        return {"k": self.k, "n_samp": self.n_samp, "p": "inf" if self.p == math.inf else 1,
                "relTol": self.rel_tol, "rejectionCap": self.rejection_cap,
                "heuristicSamples": self.heuristic_samples, "probes": self.probes, "solver": self.solver.to_dict()}


@dataclass
class BallRecord:
    ball: NormBall
    eps_incumbent: float
    eps_lb: float
    status: str
    nodes: int = 0
    lp_iterations: int = 0
    sample_index: int = -1
    note: str = ""
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        d = {"center": self.ball.center.tolist(), "radius": self.ball.radius,
             "p": "inf" if self.ball.p == math.inf else 1,
             "eps_incumbent": _json_float(self.eps_incumbent), "eps_lb": self.eps_lb,
             "status": self.status, "nodes": self.nodes, "lp_iterations": self.lp_iterations,
             "sample_index": self.sample_index}
        if self.note:
            d["note"] = self.note
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> BallRecord:
        ball = NormBall(np.asarray(d["center"], dtype=float), d["radius"], d["p"])
        inc = d["eps_incumbent"]
        return cls(ball, math.inf if inc is None else float(inc), float(d["eps_lb"]),
                   d["status"], d.get("nodes", 0), d.get("lp_iterations", 0),
                   d.get("sample_index", -1), d.get("note", ""))


@dataclass
class StepResult:
    t: int
    records: list[BallRecord] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def balls(self) -> list[NormBall]:
        return [r.ball for r in self.records]


@dataclass
class BackreachResult:
    steps: list[StepResult]
    config: dict
    goal: Polytope
    domain: tuple[np.ndarray, np.ndarray]
    config_hash: str = ""

    @property
    def dim(self) -> int:
        return self.domain[0].size

    def balls(self, t: int) -> list[NormBall]:
        return self.steps[t - 1].balls

    def all_balls(self) -> list[tuple[int, NormBall]]:
        return [(s.t, b) for s in self.steps for b in s.balls]

    def to_dict(self) -> dict:
        return {
            "format": RESULT_FORMAT,
            "config_hash": self.config_hash,
            "config": self.config,
            "goal": self.goal.to_dict(),
            "domain": {"lo": self.domain[0].tolist(), "hi": self.domain[1].tolist()},
            "steps": [{"t": s.t, "balls": [r.to_dict() for r in s.records], "errors": s.errors}
                      for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> BackreachResult:
        if d.get("format") != RESULT_FORMAT:
            raise ModelError(f"not a backreach result (format {d.get('format')!r})")
        steps = [StepResult(s["t"], [BallRecord.from_dict(b) for b in s["balls"]],
                            list(s.get("errors", []))) for s in d["steps"]]
        dom = (np.asarray(d["domain"]["lo"], dtype=float), np.asarray(d["domain"]["hi"], dtype=float))
        return cls(steps, dict(d["config"]), Polytope.from_dict(d["goal"]), dom,
                   d.get("config_hash", ""))

    def timings(self) -> dict:
        return {"config_hash": self.config_hash,
                "steps": [{"t": s.t, "wall_time": s.wall_time,
                           "balls": [r.wall_time for r in s.records]} for s in self.steps],
                "total": sum(s.wall_time for s in self.steps)}


def _json_float(v: float):
    return v if math.isfinite(v) else None


def config_hash(cfg: Mapping) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# one ball


@dataclass
class BallSolve:
    eps_lb: float
    eps_incumbent: float
    status: str
    solution: object | None
    eps_heuristic: float
    note: str = ""


def _distance(x, center, p):
    d = np.atleast_2d(x) - center
    return np.sum(np.abs(d), axis=1) if p == 1 else np.max(np.abs(d), axis=1)


def _escapes(nfl, goal, x, t):
    """True where the true t-step image is outside int G (closed-complement membership)."""
    return goal.polytope.margin(nfl.simulate(x, t)) >= 0.0


def _bisect_escape(nfl, goal, t, x_in, x_out, iters: int = 40):
    """Shrink the segment [x_in, x_out] (x_in reaching int G, x_out escaping) onto the boundary."""
    for _ in range(iters):
        mid = 0.5 * (x_in + x_out)
        if _escapes(nfl, goal, mid[None, :], t)[0]:
            x_out = mid
        else:
            x_in = mid
    return x_out


def escape_heuristic(nfl: NeuralFeedbackLoop, goal: GoalSet, x_d, t: int, p: float,
                     samples: int = 2048, rounds: int = 3):
    """Upper bound on the optimal radius from true-dynamics samples.

    Returns ``(eps_h, x_h)`` where ``x_h`` is an escaping point in D at distance
    ``eps_h`` from ``x_d``, or ``(inf, None)`` when no escaping point was found.
    Deterministic: uses a fixed-seed generator.
    """
    rng = np.random.default_rng(20240521)
    lo, hi = nfl.domain_lo, nfl.domain_hi
    x_d = np.asarray(x_d, dtype=float)
    best, best_x = math.inf, None
    radius = math.inf
    for _ in range(rounds):
        if math.isfinite(radius):
            blo = np.maximum(lo, x_d - radius)
            bhi = np.minimum(hi, x_d + radius)
        else:
            blo, bhi = lo, hi
        pts = rng.uniform(blo, bhi, size=(samples, x_d.size))
        esc = _escapes(nfl, goal, pts, t)
        if not np.any(esc):
            if best_x is None:
                return math.inf, None
            break
        cand = pts[esc]
        dist = _distance(cand, x_d, p)
        j = int(np.argmin(dist))
        if dist[j] < best:
            # walk in from x_d to the first escaping point along the segment
            seg = x_d + np.linspace(0.0, 1.0, 65)[1:, None] * (cand[j] - x_d)
            first = int(np.argmax(_escapes(nfl, goal, seg, t)))
            inner = x_d if first == 0 else seg[first - 1]
            xb = _bisect_escape(nfl, goal, t, inner, seg[first])
            db = float(_distance(xb, x_d, p)[0])
            if db < best:
                best, best_x = db, xb
        radius = best
    return best, best_x


def distance_to_domain_boundary(x_d, lo, hi) -> float:
    """Largest radius keeping the ball inside the box (the same for p = 1 and p = inf)."""
    return float(max(0.0, np.min(np.minimum(x_d - lo, hi - x_d))))


def build_ball_model(nfl: NeuralFeedbackLoop, envelopes, x_d, goal: GoalSet, t: int, p: float,
                     box=None, eps_max: float | None = None):
    """MILP for the smallest escaping ball; returns ``(model, eps, x_init, x_final, cache)``."""
    lo, hi = (nfl.domain_lo, nfl.domain_hi) if box is None else box
    cache = propagate_bounds(nfl, envelopes, t, (lo, hi))
    model = MilpModel(name=f"ball_t{t}")
    x_init, x_final = encode_rollout(model, nfl, envelopes, t, cache)
    if eps_max is None:
        eps_max = float(np.max(np.maximum(np.abs(hi - x_d), np.abs(x_d - lo))))
        if p == 1:
            eps_max *= x_d.size
    eps = model.add_var(0.0, eps_max, name="eps")
    add_norm_le(model, x_init, x_d, eps, p)
    flo, fhi = cache.final
    add_not_in_interior(model, x_final, goal.polytope, list(zip(flo, fhi)))
    model.set_objective(LinExpr({eps: 1.0}), "minimize")
    return model, eps, x_init, x_final, cache


def initial_ball_model(nfl: NeuralFeedbackLoop, envelopes, x_d, goal: GoalSet, t: int, p: float,
                       heuristic_samples: int = 2048):
    """The ball MILP restricted by the escape heuristic; returns ``(model, eps_h)``."""
    x_d = np.asarray(x_d, dtype=float)
    p = _norm_order(p)
    lo, hi = nfl.domain_lo, nfl.domain_hi
    eps_h, _ = escape_heuristic(nfl, goal, x_d, t, p, heuristic_samples)
    if math.isfinite(eps_h):
        box = (np.maximum(lo, x_d - eps_h), np.minimum(hi, x_d + eps_h))
        eps_max = eps_h
    else:
        box, eps_max = None, None
    model, *_ = build_ball_model(nfl, envelopes, x_d, goal, t, p, box, eps_max)
    return model, eps_h


def min_ball_radius(nfl: NeuralFeedbackLoop, envelopes, x_d, goal: GoalSet, t: int, p: float,
                    opts: SolveOptions | None = None, solver=None,
                    heuristic_samples: int = 2048, probes: int = 6) -> BallSolve:
    """Sound radius for a ball around ``x_d`` whose points all reach the goal in ``t`` steps.

    A true-dynamics escaping point bounds the optimum from above, so the MILP
    is built over the box of that radius only, with correspondingly tighter
    intermediate bounds. The optimum is unchanged: the minimizer lies in it.

    When the solve stops at a limit, up to ``probes`` smaller problems
    restricted to radius ``r`` bisect the gap: an infeasible one proves
    ``r`` is a lower bound, and a truncated one still proves ``min(bound, r)``.
    """
    opts = opts or SolveOptions()
    x_d = np.asarray(x_d, dtype=float)
    p = _norm_order(p)
    lo, hi = nfl.domain_lo, nfl.domain_hi
    d_edge = distance_to_domain_boundary(x_d, lo, hi)
    model, eps_h = initial_ball_model(nfl, envelopes, x_d, goal, t, p, heuristic_samples)
    sol = solve(model, opts, solver)
    if sol.status == SolveStatus.INFEASIBLE:
        if math.isfinite(eps_h):
            raise ModelError(f"ball MILP infeasible although a true escaping point exists at "
                             f"distance {eps_h:.6g} (t={t}); numerical trouble in the encoding")
        # nothing in D escapes under the abstraction: the whole domain is certified
        return BallSolve(d_edge, math.inf, sol.status.value, sol, eps_h, "no escaping point in D")
    eps_lb = max(0.0, float(sol.objective_bound))
    eps_inc = float(sol.objective_incumbent)
    status = sol.status.value
    note = ""
    upper = min(eps_inc, eps_h)
    used = 0
    # radii past the domain edge are clipped anyway, so no probe looks beyond it
    while sol.status != SolveStatus.OPTIMAL and used < probes and math.isfinite(upper) \
            and eps_lb < d_edge and upper - eps_lb > max(opts.gap_tol, 1e-3 * upper):
        used += 1
        r = min(0.5 * (eps_lb + upper), d_edge)
        pbox = (np.maximum(lo, x_d - r), np.minimum(hi, x_d + r))
        pmodel, *_ = build_ball_model(nfl, envelopes, x_d, goal, t, p, pbox, r)
        psol = solve(pmodel, opts, solver)
        if psol.status == SolveStatus.INFEASIBLE:
            eps_lb = r
            continue
        eps_lb = max(eps_lb, min(float(psol.objective_bound), r))
        if psol.has_incumbent:
            eps_inc = min(eps_inc, float(psol.objective_incumbent))
        if psol.status == SolveStatus.OPTIMAL:
            eps_lb = max(eps_lb, float(psol.objective_bound))
            break
        upper = r
    if used:
        note = f"{used} radius probes"
        if eps_inc - eps_lb <= opts.gap_tol:
            status = SolveStatus.OPTIMAL.value
    if eps_lb > d_edge:
        eps_lb = d_edge
        note = "; ".join(filter(None, [note, "clipped to the domain"]))
    return BallSolve(eps_lb, eps_inc, status, sol, eps_h, note)


# ---------------------------------------------------------------------------
# full run


def run_backreach(nfl: NeuralFeedbackLoop, goal: GoalSet, config: ReachConfig, solver=None,
                  config_echo: Mapping | None = None,
                  on_ball: Callable[[int, BallRecord], None] | None = None) -> BackreachResult:
    """Per horizon t = 1..k, sample ``n_samp`` centers and record the sound ball around each."""
    sampler = SobolSampler(nfl.domain_lo, nfl.domain_hi)
    envelopes = EnvelopeSet(nfl.dynamics.terms, config.rel_tol)
    echo = dict(config_echo) if config_echo is not None else {"reach": config.to_dict()}
    steps = []
    for t in range(1, config.k + 1):
        t0 = time.perf_counter()
        step = StepResult(t)
        for j in range(config.n_samp):
            try:
                x_d = sample_center(sampler, goal, nfl, t, config.rejection_cap)
            except RejectionCapError as exc:
                step.errors.append(f"ball {j}: {exc}")
                break
            idx = sampler.index - 1
            b0 = time.perf_counter()
            try:
                bs = min_ball_radius(nfl, envelopes, x_d, goal, t, config.p, config.solver,
                                     solver, config.heuristic_samples, config.probes)
            except (ModelError, ArithmeticError, RuntimeError, ValueError) as exc:
                step.errors.append(f"ball {j} (sample {idx}): {type(exc).__name__}: {exc}")
                log.warning("t=%d ball %d failed: %s", t, j, exc)
                continue
            stats = bs.solution.stats if bs.solution is not None else None
            rec = BallRecord(NormBall(x_d, bs.eps_lb, config.p), bs.eps_incumbent, bs.eps_lb,
                             bs.status, stats.nodes if stats else 0,
                             stats.lp_iterations if stats else 0, idx, bs.note,
                             time.perf_counter() - b0)
            step.records.append(rec)
            if on_ball is not None:
                on_ball(t, rec)
        if not step.records:
            log.warning("no balls at t=%d; storing an empty union", t)
        step.wall_time = time.perf_counter() - t0
        steps.append(step)
    return BackreachResult(steps, echo, goal.polytope, (nfl.domain_lo.copy(), nfl.domain_hi.copy()),
                           config_hash(echo))
