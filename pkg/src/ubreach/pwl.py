"""Sound piecewise-linear envelopes for scalar nonlinearities.

An envelope is a pair of continuous piecewise-linear functions on a shared
uniform knot grid with ``lower(x) <= g(x) <= upper(x)`` on the whole domain.
Soundness comes from a Lipschitz argument: on each segment the deviation of
``g`` from its secant is sampled on a fine grid and widened by
``L_e * h_s / 2``, where ``L_e = L + |secant slope|`` bounds the Lipschitz
constant of the deviation and ``h_s`` is the sampling step.

Encoded into a MILP, an envelope is a relation rather than a function: for a
given ``x`` any ``y`` between the bounds is admissible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .milp.model import EncodingError, LinExpr, MilpModel, VarId

DEFAULT_MAX_KNOTS = 2**20
_SAMPLE_CHUNK = 1 << 22


class AbstractionTooTightError(ValueError):
    """The knot cap was reached before the requested tolerance."""


class EnvelopeDomainError(EncodingError):
    """Input bounds escape the envelope's domain."""


@dataclass(frozen=True)
class ScalarFn:
    """Scalar function with a Lipschitz constant valid on every queried interval."""

    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    affine: bool = False  # exact secants, no sampling needed

    def __call__(self, x):
        return self.evaluate(np.asarray(x, dtype=float))

    def scaled(self, k: float) -> ScalarFn:
        base = self.evaluate
        return ScalarFn(f"{k:g}*{self.name}", lambda x: k * base(x), abs(k) * self.lipschitz,
                        self.affine)


SIN = ScalarFn("sin", np.sin, 1.0)
COS = ScalarFn("cos", np.cos, 1.0)
BUILTINS = {"sin": SIN, "cos": COS}


def linear_fn(slope: float, intercept: float) -> ScalarFn:
    return ScalarFn(f"{slope:g}*x+{intercept:g}", lambda x: slope * x + intercept, abs(slope),
                    affine=True)


@dataclass(frozen=True)
class PwlFunction:
    """Linear interpolation through ``(knots[i], values[i])``."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.ndim != 1 or k.size < 2:
            raise ValueError("a piecewise-linear function needs at least two knots")
        if k.shape != v.shape:
            raise ValueError(f"{k.size} knots but {v.size} values")
        if not np.all(np.diff(k) > 0):
            raise ValueError("knots must be strictly increasing")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
            raise ValueError("knots and values must be finite")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        return np.interp(x, self.knots, self.values)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)


@dataclass(frozen=True)
class PwlEnvelope:
    domain: tuple[float, float]
    lower: PwlFunction
    upper: PwlFunction
    certified_rel_error: float
    name: str = "g"

    def __post_init__(self):
        if not np.array_equal(self.lower.knots, self.upper.knots):
            raise ValueError("lower and upper bounds must share knots")
        if np.any(self.lower.values > self.upper.values):
            raise ValueError("lower bound exceeds upper bound at a knot")
        a, b = self.domain
        if self.lower.knots[0] != a or self.lower.knots[-1] != b:
            raise ValueError("knots must span exactly the domain")

    @property
    def knots(self) -> np.ndarray:
        return self.lower.knots

    @property
    def n_segments(self) -> int:
        return self.knots.size - 1

    def max_gap(self) -> float:
        return float(np.max(self.upper.values - self.lower.values))

    def bounds_over(self, lo: float, hi: float) -> tuple[float, float]:
        """``(min lower, max upper)`` over ``[lo, hi]``."""
        self._check_inside(lo, hi)
        k = self.knots
        inner = (k > lo) & (k < hi)
        pts = np.concatenate([[lo, hi], k[inner]])
        return float(np.min(self.lower(pts))), float(np.max(self.upper(pts)))

    def active_segments(self, lo: float, hi: float) -> np.ndarray:
        self._check_inside(lo, hi)
        k = self.knots
        seg = np.flatnonzero((k[1:] > lo) & (k[:-1] < hi))
        if seg.size == 0:
            # degenerate interval sitting on a knot
            seg = np.array([min(int(np.searchsorted(k, lo, side="right")) - 1, k.size - 2)])
        return seg

    def _check_inside(self, lo: float, hi: float) -> None:
        a, b = self.domain
        if lo < a or hi > b or lo > hi:
            raise EnvelopeDomainError(
                f"interval [{lo}, {hi}] is not inside the {self.name} envelope domain [{a}, {b}]")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "domain": list(self.domain),
            "knots": self.knots.tolist(),
            "lower": self.lower.values.tolist(),
            "upper": self.upper.values.tolist(),
            "certified_rel_error": self.certified_rel_error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PwlEnvelope:
        knots = np.asarray(d["knots"], dtype=float)
        return cls((float(d["domain"][0]), float(d["domain"][1])),
                   PwlFunction(knots, np.asarray(d["lower"], dtype=float)),
                   PwlFunction(knots, np.asarray(d["upper"], dtype=float)),
                   float(d["certified_rel_error"]), d.get("name", "g"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> PwlEnvelope:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _segment_offsets(g: ScalarFn, knots: np.ndarray, gk: np.ndarray, per_seg: int):
    """Sampled min/max deviation from each segment's secant, before inflation."""
    n_seg = knots.size - 1
    dmin = np.empty(n_seg)
    dmax = np.empty(n_seg)
    t = np.arange(per_seg + 1) / per_seg
    step = max(1, _SAMPLE_CHUNK // (per_seg + 1))
    for s0 in range(0, n_seg, step):
        s1 = min(n_seg, s0 + step)
        xa = knots[s0:s1, None]
        xb = knots[s0 + 1:s1 + 1, None]
        xs = xa + (xb - xa) * t
        xs[:, -1] = xb[:, 0]
        sec = gk[s0:s1, None] + (gk[s0 + 1:s1 + 1, None] - gk[s0:s1, None]) * t
        dev = g(xs) - sec
        dmin[s0:s1] = dev.min(axis=1)
        dmax[s0:s1] = dev.max(axis=1)
    return dmin, dmax


def _envelope_at(g: ScalarFn, a: float, b: float, n_seg: int, per_seg: int):
    knots = np.linspace(a, b, n_seg + 1)
    gk = g(knots)
    dmin, dmax = _segment_offsets(g, knots, gk, per_seg)
    h = (b - a) / n_seg
    slope = np.abs(np.diff(gk)) / h
    infl = (g.lipschitz + slope) * (h / per_seg) / 2.0
    scale = max(1.0, float(np.max(np.abs(gk))))
    rounding = 64 * np.finfo(float).eps * scale
    lo_off = np.minimum(dmin, 0.0) - infl - rounding
    hi_off = np.maximum(dmax, 0.0) + infl + rounding
    # continuous functions: each knot takes the looser offset of its two segments
    lo_k = np.empty(n_seg + 1)
    hi_k = np.empty(n_seg + 1)
    lo_k[:-1] = lo_off
    lo_k[-1] = lo_off[-1]
    lo_k[1:-1] = np.minimum(lo_off[:-1], lo_off[1:])
    hi_k[:-1] = hi_off
    hi_k[-1] = hi_off[-1]
    hi_k[1:-1] = np.maximum(hi_off[:-1], hi_off[1:])
    return knots, gk + lo_k, gk + hi_k


def build_envelope(g: ScalarFn, domain, rel_tol: float, max_knots: int = DEFAULT_MAX_KNOTS,
                   name: str | None = None) -> PwlEnvelope:
    """Uniform-knot envelope whose gap, relative to the range of ``g``, is at most ``rel_tol``.

    The knot count doubles until the certified relative error meets the
    tolerance.
    """
    a, b = float(domain[0]), float(domain[1])
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise ValueError(f"envelope domain must satisfy a < b, got [{a}, {b}]")
    if not rel_tol > 0:
        raise ValueError(f"relTol must be positive, got {rel_tol}")
    if g.affine:
        knots = np.array([a, b])
        vals = g(knots)
        f = PwlFunction(knots, vals)
        return PwlEnvelope((a, b), f, f, 0.0, name or g.name)
    L = float(g.lipschitz)
    probe = g(np.linspace(a, b, 4097))
    g_range = max(float(probe.max() - probe.min()), 1e-12)
    budget = rel_tol * g_range

    # coarse search on the curvature part only (cheap sampling)
    n_seg = 1
    while True:
        knots = np.linspace(a, b, n_seg + 1)
        gk = g(knots)
        dmin, dmax = _segment_offsets(g, knots, gk, 16)
        if np.max(np.maximum(dmax, 0) - np.minimum(dmin, 0)) <= 0.5 * budget:
            break
        if n_seg + 1 > max_knots:
            raise AbstractionTooTightError(
                f"{name or g.name}: more than {max_knots} knots needed for relTol={rel_tol:g}; "
                f"use a looser tolerance")
        n_seg *= 2

    # certification pass; sampling step chosen so that inflation uses <= 1/4 of the budget
    while True:
        h = (b - a) / n_seg
        per_seg = 2 ** max(1, math.ceil(math.log2(max(2.0, 2.0 * L * h * 4.0 / budget))))
        knots, lo_v, hi_v = _envelope_at(g, a, b, n_seg, per_seg)
        err = float(np.max(hi_v - lo_v)) / g_range
        if err <= rel_tol:
            return PwlEnvelope((a, b), PwlFunction(knots, lo_v), PwlFunction(knots, hi_v), err,
                               name or g.name)
        if 2 * n_seg + 1 > max_knots:
            raise AbstractionTooTightError(
                f"{name or g.name}: more than {max_knots} knots needed for relTol={rel_tol:g}; "
                f"use a looser tolerance")
        n_seg *= 2


def encode_envelope(model: MilpModel, env: PwlEnvelope, x: VarId, x_bounds) -> VarId:
    """Return ``y`` related to ``x`` by ``lower(x) <= y <= upper(x)``.

    Convex-combination form over the knots of the active segments: weights
    ``lam_k >= 0`` summing to one place ``x = sum lam_k x_k`` and
    ``sum lam_k lower_k <= y <= sum lam_k upper_k``; one binary per active
    segment selects it, and only the two knots of the selected segment may
    carry weight. The feasible set is exactly the envelope's graph region, and
    the LP relaxation is its convex hull. A single active segment needs no
    binaries.
    """
    l, u = float(x_bounds[0]), float(x_bounds[1])
    segs = env.active_segments(l, u)
    y_lo, y_hi = env.bounds_over(l, u)
    model._check(x)
    y = model.add_var(y_lo, y_hi)
    k = env.knots
    lo_v = env.lower.values
    hi_v = env.upper.values

    if segs.size == 1:
        s = int(segs[0])
        h = k[s + 1] - k[s]
        for vals, sense in ((lo_v, ">="), (hi_v, "<=")):
            slope = (vals[s + 1] - vals[s]) / h
            # y (>=|<=) vals[s] + slope * (x - k[s])
            model.add_constraint(y - slope * x, sense, vals[s] - slope * k[s])
        return y

    first, last = int(segs[0]), int(segs[-1]) + 1
    knots = range(first, last + 1)
    lam = {i: model.add_var(0.0, 1.0) for i in knots}
    delta = {int(s): model.add_binary() for s in segs}
    model.add_constraint(LinExpr({v: 1.0 for v in lam.values()}), "==", 1.0)
    model.add_constraint(LinExpr({d: 1.0 for d in delta.values()}), "==", 1.0)
    for i, v in lam.items():
        # knot i carries weight only if segment i-1 or i is selected
        adj = {delta[s]: -1.0 for s in (i - 1, i) if s in delta}
        model.add_constraint(LinExpr({v: 1.0, **adj}), "<=", 0.0)
    model.add_constraint(LinExpr({x: 1.0, **{v: -k[i] for i, v in lam.items()}}), "==", 0.0)
    model.add_constraint(LinExpr({y: 1.0, **{v: -lo_v[i] for i, v in lam.items()}}), ">=", 0.0)
    model.add_constraint(LinExpr({y: 1.0, **{v: -hi_v[i] for i, v in lam.items()}}), "<=", 0.0)
    return y
