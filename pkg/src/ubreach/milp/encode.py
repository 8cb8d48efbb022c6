"""Big-M encodings of piecewise-linear primitives.

All constants are derived from the caller-supplied variable bounds; there is
no global fallback M. Stable cases (ReLU with fixed phase, max inputs that
can never win) are simplified away without creating binaries.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .model import (EncodingError, LinExpr, MilpModel, NormBall, Polytope,
                    UnsupportedNormError, VarId, _norm_order)

MAX_L1_COMPLEMENT_DIM = 16


def _finite_interval(bounds, what: str) -> tuple[float, float]:
    lo, hi = (float(bounds[0]), float(bounds[1]))
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise EncodingError(f"{what} needs finite bounds, got [{lo}, {hi}]")
    if lo > hi:
        raise EncodingError(f"{what} has empty bounds [{lo}, {hi}]")
    return lo, hi


def expr_bounds(expr: LinExpr, lo: Sequence[float], hi: Sequence[float],
                index: dict[VarId, int]) -> tuple[float, float]:
    """Interval of ``expr`` when each var ranges over ``[lo[k], hi[k]]``, k = index[var]."""
    low = high = expr.constant
    for v, a in expr.terms.items():
        k = index[v]
        if a >= 0:
            low += a * lo[k]
            high += a * hi[k]
        else:
            low += a * hi[k]
            high += a * lo[k]
    return low, high


def add_relu(model: MilpModel, x: VarId, bounds) -> VarId:
    """Return ``t`` with ``t = max(x, 0)`` for ``x`` in ``bounds``."""
    l, u = _finite_interval(bounds, f"ReLU input {x}")
    model._check(x)
    if l >= 0.0:
        return x
    if u <= 0.0:
        return model.add_var(0.0, 0.0)
    t = model.add_var(0.0, u)
    d = model.add_binary()
    model.add_constraint(t - x, ">=", 0.0)
    model.add_constraint(t - u * d, "<=", 0.0)
    # t <= x - l (1 - d)
    model.add_constraint(t - x - l * d, "<=", -l)
    return t


def encode_max(model: MilpModel, exprs: Sequence[LinExpr], bounds: Sequence[Sequence[float]],
               sign: float = 1.0) -> LinExpr:
    """Encode ``max`` (sign=+1) or ``min`` (sign=-1) of affine expressions.

    Returns an expression equal to the extremum; a fresh variable is created
    only when more than one input survives pruning.
    """
    if len(exprs) == 0:
        raise EncodingError("max/min of an empty input list")
    if len(exprs) != len(bounds):
        raise EncodingError(f"{len(exprs)} inputs but {len(bounds)} bound pairs")
    # work with y_i = sign * x_i so that min becomes max
    ys, lo, hi = [], [], []
    for e, b in zip(exprs, bounds):
        l, u = _finite_interval(b, "max/min input")
        ys.append(LinExpr.of(e) * sign)
        lo.append(l if sign > 0 else -u)
        hi.append(u if sign > 0 else -l)
    l_max = max(lo)
    keep = [i for i in range(len(ys)) if hi[i] >= l_max]
    if len(keep) == 1:
        return ys[keep[0]] * sign
    u_all = max(hi[i] for i in keep)
    tau = model.add_var(l_max, u_all)
    deltas = []
    for i in keep:
        u_other = max(hi[j] for j in keep if j != i)
        big_m = u_other - lo[i]
        d = model.add_binary()
        deltas.append(d)
        model.add_constraint(tau - ys[i], ">=", 0.0)
        # tau <= y_i + M (1 - d)
        model.add_constraint(tau - ys[i] + big_m * d, "<=", big_m)
    model.add_constraint(LinExpr({d: 1.0 for d in deltas}), "==", 1.0)
    if sign > 0:
        return LinExpr.of(tau)
    # t = -tau; expose it as its own variable so callers get a VarId
    t = model.add_var(-u_all, -l_max)
    model.add_constraint(t + tau, "==", 0.0)
    return LinExpr.of(t)


def _as_var(model: MilpModel, expr: LinExpr, bounds: tuple[float, float]) -> VarId:
    if len(expr.terms) == 1 and expr.constant == 0.0:
        (v, c), = expr.terms.items()
        if c == 1.0:
            return v
    t = model.add_var(*bounds)
    model.add_constraint(t - expr, "==", 0.0)
    return t


def add_max(model: MilpModel, xs: Sequence[VarId], bounds) -> VarId:
    """Return ``t = max(xs)``; inputs whose upper bound is below the largest lower bound are pruned."""
    if len(xs) == 0:
        raise EncodingError("max of an empty input list")
    for x in xs:
        model._check(x)
    e = encode_max(model, [LinExpr.of(x) for x in xs], bounds, 1.0)
    lo = max(b[0] for b in bounds)
    hi = max(b[1] for b in bounds)
    return _as_var(model, e, (lo, hi))


def add_min(model: MilpModel, xs: Sequence[VarId], bounds) -> VarId:
    """Return ``t = min(xs)``, encoded as ``-max(-xs)``."""
    if len(xs) == 0:
        raise EncodingError("min of an empty input list")
    for x in xs:
        model._check(x)
    e = encode_max(model, [LinExpr.of(x) for x in xs], bounds, -1.0)
    lo = min(b[0] for b in bounds)
    hi = min(b[1] for b in bounds)
    return _as_var(model, e, (lo, hi))


def add_norm_le(model: MilpModel, x: Sequence[VarId], center, eps: VarId, p) -> None:
    """Constrain ``||x - center||_p <= eps`` for p in {1, inf}."""
    p = _norm_order(p)
    center = np.asarray(center, dtype=float).reshape(-1)
    if center.size != len(x):
        raise EncodingError(f"center has dimension {center.size}, expected {len(x)}")
    model._check(eps)
    if p == math.inf:
        for xi, ci in zip(x, center):
            model.add_constraint(xi - eps, "<=", ci)
            model.add_constraint(xi + eps, ">=", ci)
        return
    zs = []
    for xi, ci in zip(x, center):
        l, u = model.bounds(xi)
        z_hi = max(abs(l - ci), abs(u - ci))
        if not math.isfinite(z_hi):
            z_hi = model.bounds(eps)[1]
        z = model.add_var(0.0, z_hi)
        zs.append(z)
        model.add_constraint(xi - z, "<=", ci)
        model.add_constraint(xi + z, ">=", ci)
    model.add_constraint(LinExpr({z: 1.0 for z in zs}) - eps, "<=", 0.0)


def add_not_in_interior(model: MilpModel, x: Sequence[VarId], S: Polytope, bounds) -> None:
    """Constrain ``x`` to lie outside ``int S``: ``max_i (a_i x - b_i) >= 0``.

    ``bounds`` gives a finite ``[l, u]`` per coordinate of ``x``. Rows that
    cannot reach zero anywhere on the box are dropped; they can never be the
    active side of the disjunction. When one row is nonnegative on the whole
    box the condition always holds and nothing is added.
    """
    if S.dim != len(x):
        raise EncodingError(f"polytope dimension {S.dim} != {len(x)} variables")
    lo = np.empty(len(x))
    hi = np.empty(len(x))
    for k, b in enumerate(bounds):
        lo[k], hi[k] = _finite_interval(b, f"coordinate {k}")
    index = {v: k for k, v in enumerate(x)}
    exprs, ebounds = [], []
    for a, b in zip(S.A, S.b):
        e = LinExpr.dot(a, x, -b)
        el, eu = expr_bounds(e, lo, hi, index)
        if el >= 0.0:
            return
        if eu < 0.0:
            continue
        exprs.append(e)
        ebounds.append((el, eu))
    if not exprs:
        # the whole box sits inside int S
        model.add_constraint(LinExpr(), ">=", 1.0, name="box_inside_interior")
        return
    t = encode_max(model, exprs, ebounds, 1.0)
    model.add_constraint(t, ">=", 0.0)


def add_not_in_ball(model: MilpModel, x: Sequence[VarId], ball: NormBall, bounds) -> None:
    """Constrain ``x`` outside the interior of ``ball`` via its facet polytope."""
    if ball.p == 1.0 and ball.dim > MAX_L1_COMPLEMENT_DIM:
        raise EncodingError(
            f"p=1 ball complement in dimension {ball.dim} needs 2^{ball.dim} facets; "
            f"limit is {MAX_L1_COMPLEMENT_DIM}")
    add_not_in_interior(model, x, ball.as_polytope(), bounds)
