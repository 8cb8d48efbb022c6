"""Symbolic mixed-integer linear programs.

A :class:`MilpModel` owns a table of variables (continuous with finite
bounds, or binary), a list of linear constraints and an objective. Models are
built incrementally by the encoders in :mod:`ubreach.milp.encode` and handed
to :mod:`ubreach.solver` as read-only inputs.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np


class ModelError(ValueError):
    """Malformed model input (dangling variable, non-finite data, ...)."""


class EncodingError(ModelError):
    """An encoder received inputs it cannot express as linear constraints."""


class UnsupportedNormError(EncodingError):
    """Only p = 1 and p = inf norms have linear encodings."""


Number = Union[int, float]


@dataclass(frozen=True, slots=True)
class VarId:
    """Handle into a model's variable table."""

    index: int

    def __repr__(self) -> str:
        return f"VarId({self.index})"

    # arithmetic sugar, so encoders read like the math
    def __add__(self, other) -> LinExpr:
        return LinExpr.of(self) + other

    __radd__ = __add__

    def __sub__(self, other) -> LinExpr:
        return LinExpr.of(self) - other

    def __rsub__(self, other) -> LinExpr:
        return LinExpr.of(other) - self

    def __mul__(self, k: Number) -> LinExpr:
        return LinExpr.of(self) * k

    __rmul__ = __mul__

    def __neg__(self) -> LinExpr:
        return LinExpr.of(self) * -1.0


class LinExpr:
    """Sum of ``coef * var`` terms plus a constant; duplicate vars are merged."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Mapping[VarId, float] | Iterable[tuple[float, VarId]] | None = None,
                 constant: float = 0.0):
        self.terms: dict[VarId, float] = {}
        if terms is not None:
            items = terms.items() if isinstance(terms, Mapping) else ((v, c) for c, v in terms)
            for var, coef in items:
                if not isinstance(var, VarId):
                    raise ModelError(f"expected VarId, got {var!r}")
                coef = float(coef)
                if not math.isfinite(coef):
                    raise ModelError(f"non-finite coefficient {coef} on {var}")
                self.terms[var] = self.terms.get(var, 0.0) + coef
        constant = float(constant)
        if not math.isfinite(constant):
            raise ModelError(f"non-finite constant {constant}")
        self.constant = constant

    @classmethod
    def of(cls, value) -> LinExpr:
        if isinstance(value, LinExpr):
            return value.copy()
        if isinstance(value, VarId):
            return cls({value: 1.0})
        if isinstance(value, (int, float, np.floating, np.integer)):
            return cls(constant=float(value))
        raise TypeError(f"cannot convert {type(value).__name__} to LinExpr")

    @classmethod
    def dot(cls, coefs: Sequence[float], xs: Sequence[VarId], constant: float = 0.0) -> LinExpr:
        return cls(((float(a), v) for a, v in zip(coefs, xs) if a != 0.0), constant)

    def copy(self) -> LinExpr:
        out = LinExpr.__new__(LinExpr)
        out.terms = dict(self.terms)
        out.constant = self.constant
        return out

    def __add__(self, other) -> LinExpr:
        other = LinExpr.of(other)
        out = self.copy()
        for v, c in other.terms.items():
            out.terms[v] = out.terms.get(v, 0.0) + c
        out.constant += other.constant
        return out

    __radd__ = __add__

    def __sub__(self, other) -> LinExpr:
        return self + LinExpr.of(other) * -1.0

    def __rsub__(self, other) -> LinExpr:
        return LinExpr.of(other) - self

    def __mul__(self, k: Number) -> LinExpr:
        k = float(k)
        out = LinExpr.__new__(LinExpr)
        out.terms = {v: c * k for v, c in self.terms.items()}
        out.constant = self.constant * k
        return out

    __rmul__ = __mul__

    def __neg__(self) -> LinExpr:
        return self * -1.0

    def value(self, assignment: Mapping[VarId, float] | Sequence[float]) -> float:
        if isinstance(assignment, Mapping):
            return self.constant + sum(c * assignment[v] for v, c in self.terms.items())
        return self.constant + sum(c * assignment[v.index] for v, c in self.terms.items())

    def __repr__(self) -> str:
        parts = [f"{c:+g}*x{v.index}" for v, c in self.terms.items()]
        if self.constant or not parts:
            parts.append(f"{self.constant:+g}")
        return "LinExpr(" + " ".join(parts) + ")"


SENSES = ("<=", ">=", "==")


@dataclass(slots=True)
class Constraint:
    expr: LinExpr
    sense: str
    rhs: float
    name: str | None = None

    def residual(self, assignment) -> float:
        """Amount by which the constraint is violated (0 when satisfied)."""
        lhs = self.expr.value(assignment)
        if self.sense == "<=":
            return max(0.0, lhs - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass
class Polytope:
    """Halfspace representation ``{x : A x <= b}``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape[0] < 1:
            raise ModelError("polytope needs at least one halfspace")
        if self.A.shape[0] != self.b.shape[0]:
            raise ModelError(f"A has {self.A.shape[0]} rows but b has {self.b.shape[0]}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ModelError("polytope data must be finite")
        zero = np.flatnonzero(~np.any(self.A != 0.0, axis=1))
        if zero.size:
            raise EncodingError(f"polytope row {int(zero[0])} has an all-zero normal")

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> Polytope:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def margin(self, x: np.ndarray) -> np.ndarray:
        """``max_i (a_i x - b_i)`` per point; negative means strictly inside."""
        x = np.atleast_2d(x)
        return np.max(x @ self.A.T - self.b, axis=1)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return self.margin(x) <= tol

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Axis bounds when the polytope is given by +-e_i rows, else None."""
        n = self.dim
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        for a, b in zip(self.A, self.b):
            nz = np.flatnonzero(a)
            if nz.size != 1:
                continue
            i = nz[0]
            if a[i] > 0:
                hi[i] = min(hi[i], b / a[i])
            else:
                lo[i] = max(lo[i], b / a[i])
        if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
            return lo, hi
        return None

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> Polytope:
        return cls(np.asarray(d["A"], dtype=float), np.asarray(d["b"], dtype=float))


@dataclass
class NormBall:
    """Closed ball ``{x : ||x - center||_p <= radius}`` for p in {1, inf}."""

    center: np.ndarray
    radius: float
    p: float = math.inf

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(-1)
        self.radius = float(self.radius)
        self.p = _norm_order(self.p)
        if not math.isfinite(self.radius) or self.radius < 0:
            raise ModelError(f"ball radius must be finite and >= 0, got {self.radius}")

    @property
    def dim(self) -> int:
        return self.center.size

    def distance(self, x: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(x) - self.center
        if self.p == 1:
            return np.sum(np.abs(d), axis=1)
        return np.max(np.abs(d), axis=1)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return self.distance(x) <= self.radius + tol

    def as_polytope(self) -> Polytope:
        """Facet description: 2n rows for p = inf, the 2^n cross-polytope rows for p = 1."""
        n = self.dim
        if self.p == math.inf:
            eye = np.eye(n)
            return Polytope(np.vstack([eye, -eye]),
                            np.concatenate([self.center + self.radius, -(self.center - self.radius)]))
        signs = np.array(np.meshgrid(*([[1.0, -1.0]] * n), indexing="ij")).reshape(n, -1).T
        return Polytope(signs, signs @ self.center + self.radius)

    def sample_interior(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples from the ball."""
        n = self.dim
        if self.p == math.inf:
            u = rng.uniform(-1.0, 1.0, size=(count, n))
        else:
            # uniform on the l1 ball: random signs times a Dirichlet-scaled simplex point
            e = rng.exponential(size=(count, n + 1))
            u = (e[:, :n] / e.sum(axis=1, keepdims=True)) * rng.choice([-1.0, 1.0], size=(count, n))
        return self.center + self.radius * u

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "radius": self.radius, "p": _p_to_json(self.p)}

    @classmethod
    def from_dict(cls, d: Mapping) -> NormBall:
        return cls(np.asarray(d["center"], dtype=float), d["radius"], _p_from_json(d["p"]))


def _norm_order(p) -> float:
    if p in (1, 1.0):
        return 1.0
    if p in (math.inf, "inf", "Inf"):
        return math.inf
    raise UnsupportedNormError(f"norm order {p!r} is not supported; use 1 or inf")


def _p_to_json(p: float) -> str | int:
    return "inf" if p == math.inf else 1


def _p_from_json(p) -> float:
    return _norm_order(p)


@dataclass
class _Var:
    lb: float
    ub: float
    binary: bool
    name: str | None


@dataclass
class MilpModel:
    """Variables, linear constraints and an objective.

    Continuous variables must carry finite bounds by solve time; the big-M
    encoders read those bounds to size their constants.
    """

    name: str = "milp"
    _vars: list[_Var] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: LinExpr = field(default_factory=LinExpr)
    objective_sense: str = "feasibility"

    # -- variables -----------------------------------------------------------
    def add_var(self, lb: float = -math.inf, ub: float = math.inf, name: str | None = None) -> VarId:
        lb, ub = float(lb), float(ub)
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ModelError(f"invalid bounds [{lb}, {ub}] for variable {name or len(self._vars)}")
        self._vars.append(_Var(lb, ub, False, name))
        return VarId(len(self._vars) - 1)

    def add_binary(self, name: str | None = None) -> VarId:
        self._vars.append(_Var(0.0, 1.0, True, name))
        return VarId(len(self._vars) - 1)

    def add_vars(self, lbs: Sequence[float], ubs: Sequence[float], prefix: str | None = None) -> list[VarId]:
        return [self.add_var(lo, hi, None if prefix is None else f"{prefix}{i}")
                for i, (lo, hi) in enumerate(zip(lbs, ubs))]

    def _check(self, v: VarId) -> None:
        if not isinstance(v, VarId) or not 0 <= v.index < len(self._vars):
            raise ModelError(f"dangling variable {v!r} (model has {len(self._vars)} variables)")

    def bounds(self, v: VarId) -> tuple[float, float]:
        self._check(v)
        var = self._vars[v.index]
        return var.lb, var.ub

    def set_bounds(self, v: VarId, lb: float, ub: float) -> None:
        self._check(v)
        lb, ub = float(lb), float(ub)
        if lb > ub:
            raise ModelError(f"invalid bounds [{lb}, {ub}] for {v}")
        var = self._vars[v.index]
        var.lb, var.ub = lb, ub

    def fix(self, v: VarId, value: float) -> None:
        self.set_bounds(v, value, value)

    def is_binary(self, v: VarId) -> bool:
        self._check(v)
        return self._vars[v.index].binary

    def var_name(self, v: VarId) -> str:
        self._check(v)
        return self._vars[v.index].name or f"x{v.index}"

    @property
    def num_vars(self) -> int:
        return len(self._vars)

    @property
    def num_binaries(self) -> int:
        return sum(1 for v in self._vars if v.binary)

    def variables(self) -> list[VarId]:
        return [VarId(i) for i in range(len(self._vars))]

    # -- constraints and objective ------------------------------------------
    def add_constraint(self, expr, sense: str, rhs=0.0, name: str | None = None) -> Constraint:
        if sense == "=":
            sense = "=="
        if sense not in SENSES:
            raise ModelError(f"unknown constraint sense {sense!r}")
        expr = LinExpr.of(expr)
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ModelError(f"constraint rhs must be finite, got {rhs}")
        for v in expr.terms:
            self._check(v)
        # constant moves to the right-hand side
        rhs -= expr.constant
        expr.constant = 0.0
        con = Constraint(expr, sense, rhs, name)
        self.constraints.append(con)
        return con

    def set_objective(self, expr, sense: str = "minimize") -> None:
        if sense not in ("minimize", "maximize", "feasibility"):
            raise ModelError(f"unknown objective sense {sense!r}")
        expr = LinExpr.of(expr if sense != "feasibility" else 0.0)
        for v in expr.terms:
            self._check(v)
        self.objective = expr
        self.objective_sense = sense

    def copy(self) -> MilpModel:
        return copy.deepcopy(self)

    # -- evaluation -----------------------------------------------------------
    def max_violation(self, assignment: Sequence[float] | np.ndarray, int_tol: float = 1e-6) -> float:
        """Largest bound/constraint/integrality violation of a full assignment."""
        x = np.asarray(assignment, dtype=float)
        if x.shape != (len(self._vars),):
            raise ModelError(f"assignment has shape {x.shape}, model has {len(self._vars)} variables")
        worst = 0.0
        for i, var in enumerate(self._vars):
            worst = max(worst, var.lb - x[i], x[i] - var.ub)
            if var.binary and abs(x[i] - round(x[i])) > int_tol:
                worst = max(worst, abs(x[i] - round(x[i])))
        for con in self.constraints:
            worst = max(worst, con.residual(x))
        return worst

    def check_ready(self) -> None:
        """Raise unless every variable has finite bounds."""
        for i, var in enumerate(self._vars):
            if not (math.isfinite(var.lb) and math.isfinite(var.ub)):
                raise ModelError(f"variable {var.name or f'x{i}'} has non-finite bounds "
                                 f"[{var.lb}, {var.ub}]; big-M encodings and the solver need finite bounds")

    def to_arrays(self):
        """Compile to ``(A_csc, sense, rhs, lb, ub, is_binary, c, obj_sense, c0)``.

        ``A_csc`` is a :class:`scipy.sparse.csc_matrix`; ``sense`` is an int8
        array with -1 for <=, 1 for >= and 0 for ==.
        """
        from scipy import sparse

        rows, cols, vals = [], [], []
        m = len(self.constraints)
        sense = np.empty(m, dtype=np.int8)
        rhs = np.empty(m)
        code = {"<=": -1, ">=": 1, "==": 0}
        for r, con in enumerate(self.constraints):
            for v, a in con.expr.terms.items():
                if a != 0.0:
                    rows.append(r)
                    cols.append(v.index)
                    vals.append(a)
            sense[r] = code[con.sense]
            rhs[r] = con.rhs
        n = len(self._vars)
        A = sparse.csc_matrix((vals, (rows, cols)), shape=(m, n), dtype=float)
        A.sum_duplicates()
        A.sort_indices()
        lb = np.array([v.lb for v in self._vars], dtype=float)
        ub = np.array([v.ub for v in self._vars], dtype=float)
        is_bin = np.array([v.binary for v in self._vars], dtype=bool)
        c = np.zeros(n)
        for v, a in self.objective.terms.items():
            c[v.index] += a
        return A, sense, rhs, lb, ub, is_bin, c, self.objective_sense, self.objective.constant
