"""Neural feedback loops: controller network, dynamics template, bounds, MILP rollout."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .milp.encode import add_relu
from .milp.model import LinExpr, MilpModel, ModelError, VarId
from .linbounds import Graph
from .pwl import (BUILTINS, DEFAULT_MAX_KNOTS, PwlEnvelope, ScalarFn, build_envelope,
                  encode_envelope)

BLOWUP_LIMIT = 1e9
ACTIVATIONS = ("relu", "linear")


class NetworkFormatError(ValueError):
    pass


class BoundsBlowupError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


class NeuralNetwork:
    """Feed-forward network ``z_i = act_i(W_i z_{i-1} + b_i)`` with a linear output layer."""

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise NetworkFormatError("network has no layers")
        checked = []
        for i, layer in enumerate(layers):
            W = np.array(layer.weights, dtype=float)
            b = np.array(layer.bias, dtype=float)
            if W.ndim != 2:
                raise NetworkFormatError(f"layer {i}: weights must be a matrix, got shape {W.shape}")
            if b.shape != (W.shape[0],):
                raise NetworkFormatError(
                    f"layer {i}: bias has shape {b.shape}, expected ({W.shape[0]},)")
            if checked and W.shape[1] != checked[-1].out_dim:
                raise NetworkFormatError(
                    f"layer {i}: expects {W.shape[1]} inputs but layer {i - 1} "
                    f"produces {checked[-1].out_dim}")
            if layer.activation not in ACTIVATIONS:
                raise NetworkFormatError(f"layer {i}: unknown activation {layer.activation!r}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NetworkFormatError(f"layer {i}: non-finite weights")
            W.flags.writeable = False
            b.flags.writeable = False
            checked.append(Layer(W, b, layer.activation))
        if checked[-1].activation != "linear":
            raise NetworkFormatError(f"layer {len(checked) - 1}: output layer must be linear")
        self.layers: tuple[Layer, ...] = tuple(checked)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def __call__(self, x):
        z = np.asarray(x, dtype=float)
        for layer in self.layers:
            z = z @ layer.weights.T + layer.bias
            if layer.activation == "relu":
                z = np.maximum(z, 0.0)
        return z

    def to_dict(self) -> dict:
        return {"layers": [{"weights": l.weights.tolist(), "bias": l.bias.tolist(),
                            "activation": l.activation} for l in self.layers]}

    @classmethod
    def from_dict(cls, d: Mapping) -> NeuralNetwork:
        if not isinstance(d, Mapping) or not isinstance(d.get("layers"), list):
            raise NetworkFormatError("network JSON needs a 'layers' list")
        layers = []
        for i, spec in enumerate(d["layers"]):
            try:
                W = np.array(spec["weights"], dtype=float)
                b = np.array(spec["bias"], dtype=float)
                act = spec.get("activation", "relu")
            except (KeyError, TypeError, ValueError) as exc:
                raise NetworkFormatError(f"layer {i}: malformed entry ({exc})") from exc
            if W.ndim == 1 and W.size == 0:
                W = W.reshape(0, 0)
            layers.append(Layer(W, b, act))
        return cls(layers)

    @classmethod
    def identity(cls, n: int) -> NeuralNetwork:
        return cls([Layer(np.eye(n), np.zeros(n), "linear")])


def load_network(path) -> NeuralNetwork:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: not valid JSON ({exc})") from exc
    return NeuralNetwork.from_dict(data)


def save_network(nn: NeuralNetwork, path) -> None:
    # json writes floats with repr, which round-trips exactly
    Path(path).write_text(json.dumps(nn.to_dict()) + "\n")


# ---------------------------------------------------------------------------
# dynamics


@dataclass(frozen=True)
class NonlinearTerm:
    """``out * g(in_state . x + in_control . u + in_const)``."""

    fn: ScalarFn
    in_state: np.ndarray
    in_control: np.ndarray
    in_const: float
    out: np.ndarray

    def argument(self, x, u):
        return x @ self.in_state + u @ self.in_control + self.in_const


@dataclass(frozen=True)
class DynamicsTemplate:
    """``x' = A x + B u + c + sum_j out_j * g_j(arg_j(x, u))``."""

    name: str
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    terms: tuple[NonlinearTerm, ...] = ()
    params: Mapping = field(default_factory=dict)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    def step(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        nxt = x @ self.A.T + u @ self.B.T + self.c
        for term in self.terms:
            g = term.fn(term.argument(x, u))
            nxt = nxt + np.multiply.outer(g, term.out)
        return nxt


def _unicycle(params: Mapping) -> DynamicsTemplate:
    v = float(params.get("v", 1.0))
    I2 = np.eye(2)
    cos_t = NonlinearTerm(BUILTINS["cos"], np.zeros(2), np.ones(1), 0.0, np.array([v, 0.0]))
    sin_t = NonlinearTerm(BUILTINS["sin"], np.zeros(2), np.ones(1), 0.0, np.array([0.0, v]))
    return DynamicsTemplate("unicycle_heading", I2, np.zeros((2, 1)), np.zeros(2),
                            (cos_t, sin_t), {"v": v})


def _affine(params: Mapping) -> DynamicsTemplate:
    A = np.atleast_2d(np.array(params["A"], dtype=float))
    B = np.atleast_2d(np.array(params["B"], dtype=float))
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise ModelError(f"affine dynamics: A is {A.shape}, B is {B.shape}")
    c = np.array(params.get("c", np.zeros(A.shape[0])), dtype=float)
    return DynamicsTemplate("affine", A, B, c, (), {"A": A.tolist(), "B": B.tolist(),
                                                    "c": c.tolist()})


def _pendulum(params: Mapping) -> DynamicsTemplate:
    # state (angle, rate), torque input; explicit Euler
    dt = float(params.get("dt", 0.1))
    g = float(params.get("g", 9.81))
    length = float(params.get("length", 1.0))
    mass = float(params.get("mass", 1.0))
    damping = float(params.get("damping", 0.0))
    A = np.array([[1.0, dt], [0.0, 1.0 - dt * damping]])
    B = np.array([[0.0], [dt / (mass * length**2)]])
    sin_t = NonlinearTerm(BUILTINS["sin"], np.array([1.0, 0.0]), np.zeros(1), 0.0,
                          np.array([0.0, dt * g / length]))
    return DynamicsTemplate("pendulum", A, B, np.zeros(2), (sin_t,),
                            {"dt": dt, "g": g, "length": length, "mass": mass,
                             "damping": damping})


TEMPLATES = {"unicycle_heading": _unicycle, "affine": _affine, "pendulum": _pendulum}


def make_dynamics(name: str, params: Mapping | None = None) -> DynamicsTemplate:
    try:
        factory = TEMPLATES[name]
    except KeyError:
        raise ModelError(f"unknown dynamics {name!r}; choose from {sorted(TEMPLATES)}") from None
    return factory(params or {})


# ---------------------------------------------------------------------------
# closed loop


@dataclass(frozen=True)
class NeuralFeedbackLoop:
    dynamics: DynamicsTemplate
    controller: NeuralNetwork
    domain_lo: np.ndarray
    domain_hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.domain_lo, dtype=float)
        hi = np.asarray(self.domain_hi, dtype=float)
        n, m = self.dynamics.state_dim, self.dynamics.control_dim
        if self.controller.in_dim != n or self.controller.out_dim != m:
            raise ModelError(f"controller maps {self.controller.in_dim} -> "
                             f"{self.controller.out_dim} but dynamics need {n} -> {m}")
        if lo.shape != (n,) or hi.shape != (n,) or np.any(lo > hi):
            raise ModelError(f"domain must be a nonempty box in {n} dimensions")
        object.__setattr__(self, "domain_lo", lo)
        object.__setattr__(self, "domain_hi", hi)

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    def step(self, x):
        return self.dynamics.step(x, self.controller(x))

    def simulate(self, x, t: int):
        if t < 0:
            raise ValueError("step count must be nonnegative")
        x = np.asarray(x, dtype=float)
        for _ in range(t):
            x = self.step(x)
        return x


def simulate(nfl: NeuralFeedbackLoop, x, t: int):
    return nfl.simulate(x, t)


# ---------------------------------------------------------------------------
# interval bounds


class EnvelopeSet:
    """Envelopes for a template's nonlinear terms, built on demand.

    A request for ``[a, b]`` is served by an envelope over ``[-R, R]`` with
    ``R`` the smallest power of two (at least ``min_radius``) covering the
    interval, so nearby requests share one envelope and the relative error
    refers to a fixed reference range. Results are memoized.
    """

    def __init__(self, terms: Sequence[NonlinearTerm], rel_tol: float,
                 max_knots: int = DEFAULT_MAX_KNOTS, min_radius: float = 4.0):
        self.terms = tuple(terms)
        self.rel_tol = float(rel_tol)
        self.max_knots = max_knots
        self.min_radius = float(min_radius)
        self._memo: dict = {}

    def radius_for(self, a: float, b: float) -> float:
        need = max(abs(a), abs(b))
        if not math.isfinite(need):
            raise BoundsBlowupError(f"nonlinear argument interval [{a}, {b}] is unbounded")
        r = self.min_radius
        while r < need:
            r *= 2.0
        return r

    def get(self, j: int, a: float, b: float) -> PwlEnvelope:
        r = self.radius_for(a, b)
        env = self._memo.get((j, r))
        if env is None:
            term = self.terms[j]
            env = build_envelope(term.fn, (-r, r), self.rel_tol, self.max_knots, term.fn.name)
            self._memo[(j, r)] = env
        return env


class FixedEnvelopes:
    """Prebuilt envelopes, one per term; requests outside their domains fail."""

    def __init__(self, envelopes: Sequence[PwlEnvelope]):
        self.envelopes = tuple(envelopes)

    def get(self, j: int, a: float, b: float) -> PwlEnvelope:
        env = self.envelopes[j]
        env._check_inside(a, b)
        return env


def _as_provider(envelopes, n_terms: int):
    if isinstance(envelopes, (EnvelopeSet, FixedEnvelopes)):
        return envelopes
    envelopes = list(envelopes or [])
    if len(envelopes) != n_terms:
        raise ModelError(f"{n_terms} nonlinear terms but {len(envelopes)} envelopes")
    return FixedEnvelopes(envelopes)


@dataclass
class StepBounds:
    """Intervals for one application of the closed loop, starting from ``state``."""

    state: tuple[np.ndarray, np.ndarray]
    pre: list[tuple[np.ndarray, np.ndarray]]
    control: tuple[np.ndarray, np.ndarray]
    term_in: list[tuple[float, float]]
    term_out: list[tuple[float, float]]
    envelopes: list[PwlEnvelope]


@dataclass
class BoundsCache:
    steps: list[StepBounds]
    final: tuple[np.ndarray, np.ndarray]

    @property
    def k(self) -> int:
        return len(self.steps)

    def state_box(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        """Box for the state after ``s`` applications (0 = initial)."""
        return self.steps[s].state if s < self.k else self.final


def _check_blowup(what: str, lo, hi) -> None:
    if not (np.all(np.abs(lo) <= BLOWUP_LIMIT) and np.all(np.abs(hi) <= BLOWUP_LIMIT)):
        raise BoundsBlowupError(f"interval bounds for {what} exceed {BLOWUP_LIMIT:g}; "
                                f"use a smaller domain or fewer steps")


def _envelope_relaxation(envs: list[PwlEnvelope]):
    def relax(lo, hi):
        out = np.zeros((4, len(envs)))
        for j, env in enumerate(envs):
            a, b = float(lo[j]), float(hi[j])
            k = env.knots
            pts = np.concatenate([[a, b], k[(k > a) & (k < b)]])
            ylo, yhi = env.lower(pts), env.upper(pts)
            s_lo = (ylo[1] - ylo[0]) / (b - a) if b > a else 0.0
            s_hi = (yhi[1] - yhi[0]) / (b - a) if b > a else 0.0
            out[:, j] = (s_lo, np.min(ylo - s_lo * pts), s_hi, np.max(yhi - s_hi * pts))
        return out[0], out[1], out[2], out[3]

    def image(lo, hi):
        ys = np.array([env.bounds_over(float(a), float(b)) for env, a, b in zip(envs, lo, hi)])
        return ys[:, 0], ys[:, 1]

    return relax, image


def propagate_bounds(nfl: NeuralFeedbackLoop, envelopes, k: int, box: tuple | None = None,
                     method: str = "symbolic") -> BoundsCache:
    """Bounds on every intermediate quantity of ``k`` closed-loop steps from ``box``.

    ``envelopes`` is a list of prebuilt envelopes (one per nonlinear term) or
    an :class:`EnvelopeSet`. ``method="interval"`` uses interval arithmetic
    only; ``"symbolic"`` also back-substitutes linear relaxations, which is
    much tighter over several steps.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if method not in ("symbolic", "interval"):
        raise ValueError(f"unknown bounding method {method!r}")
    sym = method == "symbolic"
    dyn = nfl.dynamics
    provider = _as_provider(envelopes, len(dyn.terms))
    lo, hi = (nfl.domain_lo, nfl.domain_hi) if box is None else box
    g = Graph(lo, hi)
    x = 0
    steps = []
    n_terms = len(dyn.terms)
    arg_x = np.array([t.in_state for t in dyn.terms]).reshape(n_terms, dyn.state_dim)
    arg_u = np.array([t.in_control for t in dyn.terms]).reshape(n_terms, dyn.control_dim)
    arg_c = np.array([t.in_const for t in dyn.terms])
    out_m = np.array([t.out for t in dyn.terms]).reshape(n_terms, dyn.state_dim).T
    for s in range(k):
        pre = []
        z = x
        for i, layer in enumerate(nfl.controller.layers):
            p = g.affine([(z, layer.weights)], layer.bias, sym)
            _check_blowup(f"step {s + 1} layer {i}", g.lo[p], g.hi[p])
            pre.append((g.lo[p].copy(), g.hi[p].copy()))
            z = g.relu(p) if layer.activation == "relu" else p
        u = z
        parts = [(x, dyn.A), (u, dyn.B)]
        envs = []
        t_in, t_out = [], []
        if n_terms:
            a = g.affine([(x, arg_x), (u, arg_u)], arg_c, sym)
            _check_blowup(f"nonlinear arguments at step {s + 1}", g.lo[a], g.hi[a])
            envs = [provider.get(j, float(g.lo[a][j]), float(g.hi[a][j])) for j in range(n_terms)]
            relax, image = _envelope_relaxation(envs)
            y = g.relation(a, relax, image)
            t_in = list(zip(g.lo[a].tolist(), g.hi[a].tolist()))
            t_out = list(zip(g.lo[y].tolist(), g.hi[y].tolist()))
            parts.append((y, out_m))
        steps.append(StepBounds((g.lo[x].copy(), g.hi[x].copy()), pre,
                                (g.lo[u].copy(), g.hi[u].copy()), t_in, t_out, envs))
        x = g.affine(parts, dyn.c, sym)
        _check_blowup(f"state after step {s + 1}", g.lo[x], g.hi[x])
    return BoundsCache(steps, (g.lo[x].copy(), g.hi[x].copy()))


# ---------------------------------------------------------------------------
# MILP rollout


def encode_rollout(model: MilpModel, nfl: NeuralFeedbackLoop, envelopes, k: int,
                   cache: BoundsCache) -> tuple[list[VarId], list[VarId]]:
    """Chain ``k`` abstracted closed-loop steps; return (initial state vars, final state vars).

    The envelopes recorded in ``cache`` are used; ``envelopes`` is accepted
    for symmetry with :func:`propagate_bounds` and only checked for arity.
    """
    if cache.k < k:
        raise ModelError(f"bounds cover {cache.k} steps but {k} were requested")
    dyn = nfl.dynamics
    _as_provider(envelopes, len(dyn.terms))
    n = dyn.state_dim
    lo, hi = cache.state_box(0)
    x0 = model.add_vars(lo, hi, prefix="x_init")
    x = x0
    for s in range(k):
        sb = cache.steps[s]
        z = x
        for i, layer in enumerate(nfl.controller.layers):
            pl, ph = sb.pre[i]
            nxt = []
            for r in range(layer.out_dim):
                expr = LinExpr.dot(layer.weights[r], z, layer.bias[r])
                if layer.activation == "relu" and ph[r] <= 0.0:
                    nxt.append(None)
                    continue
                v = _defined_var(model, expr, pl[r], ph[r])
                if layer.activation == "relu":
                    v = add_relu(model, v, (pl[r], ph[r]))
                nxt.append(v)
            z = [model.add_var(0.0, 0.0) if v is None else v for v in nxt]
        u = z
        ys = []
        for term, env, (a, b) in zip(dyn.terms, sb.envelopes, sb.term_in):
            arg = LinExpr.dot(term.in_state, x, term.in_const) + LinExpr.dot(term.in_control, u)
            av = _defined_var(model, arg, a, b)
            ys.append(encode_envelope(model, env, av, (a, b)))
        nl, nh = cache.state_box(s + 1)
        x_next = []
        for i in range(n):
            expr = LinExpr.dot(dyn.A[i], x, dyn.c[i]) + LinExpr.dot(dyn.B[i], u)
            for term, y in zip(dyn.terms, ys):
                if term.out[i] != 0.0:
                    expr = expr + term.out[i] * y
            x_next.append(_defined_var(model, expr, nl[i], nh[i]))
        x = x_next
    return x0, x


def _defined_var(model: MilpModel, expr: LinExpr, lo: float, hi: float) -> VarId:
    """Variable equal to ``expr``; reuses a lone unit-coefficient variable."""
    if expr.constant == 0.0 and len(expr.terms) == 1:
        (v, coef), = expr.terms.items()
        if coef == 1.0:
            blo, bhi = model.bounds(v)
            nlo, nhi = max(blo, lo), min(bhi, hi)
            if nlo > nhi and nlo - nhi <= 1e-9 * (1.0 + abs(nlo)):
                # both bounds are sound, so a crossing is rounding on a fixed quantity
                nlo = nhi = 0.5 * (nlo + nhi)
            model.set_bounds(v, nlo, nhi)
            return v
    v = model.add_var(lo, hi)
    model.add_constraint(LinExpr({v: 1.0}) - expr, "==", 0.0)
    return v
