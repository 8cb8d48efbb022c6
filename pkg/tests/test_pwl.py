import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import enumerate_milp

from ubreach.milp import LinExpr, MilpModel
from ubreach.pwl import (BUILTINS, AbstractionTooTightError, EnvelopeDomainError, PwlEnvelope,
                         PwlFunction, ScalarFn, build_envelope, encode_envelope, linear_fn)
from ubreach.solver import solve

SIN, COS = BUILTINS["sin"], BUILTINS["cos"]


def dense(a, b, n=200_001):
    return np.linspace(a, b, n)


@pytest.mark.parametrize("fn", [SIN, COS], ids=["sin", "cos"])
@pytest.mark.parametrize("rel_tol", [1e-2, 1e-3, 1e-4])
def test_envelope_is_sound_and_meets_tolerance(fn, rel_tol):
    env = build_envelope(fn, (-4.0, 4.0), rel_tol)
    xs = dense(-4, 4)
    g = fn(xs)
    assert np.all(env.lower(xs) <= g + 1e-12)
    assert np.all(g <= env.upper(xs) + 1e-12)
    assert env.certified_rel_error <= rel_tol
    # the relative error refers to the range of g over the domain (2 here)
    assert env.max_gap() / 2.0 <= rel_tol + 1e-12


def test_knot_count_grows_with_tightness():
    n = [build_envelope(SIN, (-4, 4), tol).n_segments for tol in (1e-2, 1e-3, 1e-4)]
    assert n[0] < n[1] < n[2]
    # second-order function: 10x tighter needs about sqrt(10)x more segments
    assert n[2] / n[1] <= 8


@settings(max_examples=30, deadline=None)
@given(st.floats(-20, 19), st.floats(0.05, 6), st.floats(1e-4, 0.05), st.floats(0.2, 5))
def test_envelope_soundness_random_domain(a, width, tol, freq):
    fn = ScalarFn("sinw", lambda x: np.sin(freq * x), freq)
    env = build_envelope(fn, (a, a + width), tol)
    xs = np.linspace(a, a + width, 20_001)
    g = fn(xs)
    assert np.all(env.lower(xs) <= g + 1e-12)
    assert np.all(g <= env.upper(xs) + 1e-12)


def test_affine_function_needs_one_segment():
    env = build_envelope(linear_fn(2.0, 1.0), (-1, 1), 1e-9)
    assert env.n_segments == 1 and env.max_gap() == 0.0


def test_too_tight_is_reported():
    with pytest.raises(AbstractionTooTightError):
        build_envelope(SIN, (-4, 4), 1e-9, max_knots=64)


@pytest.mark.parametrize("domain,tol", [((1.0, 1.0), 1e-3), ((0, 1), 0.0), ((0, math.inf), 1e-3)])
def test_bad_arguments(domain, tol):
    with pytest.raises(ValueError):
        build_envelope(SIN, domain, tol)


def test_pwl_function_validation():
    with pytest.raises(ValueError):
        PwlFunction(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        PwlFunction(np.array([0.0]), np.array([1.0]))


def test_json_round_trip(tmp_path):
    env = build_envelope(COS, (-2, 2), 1e-3)
    path = tmp_path / "env.json"
    env.save(path)
    back = PwlEnvelope.load(path)
    assert np.array_equal(back.knots, env.knots)
    assert np.array_equal(back.lower.values, env.lower.values)
    assert back.certified_rel_error == env.certified_rel_error


def test_envelope_schema_accepts_saved_file():
    import jsonschema
    from ubreach.cli import load_schema
    env = build_envelope(SIN, (-1, 1), 1e-2)
    jsonschema.validate(env.to_dict(), load_schema("envelope"))


def test_queries_outside_domain_fail():
    env = build_envelope(SIN, (-1, 1), 1e-2)
    with pytest.raises(EnvelopeDomainError):
        env.bounds_over(-2, 0)


def test_bounds_over_is_sound():
    env = build_envelope(SIN, (-4, 4), 1e-3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = np.sort(rng.uniform(-4, 4, 2))
        lo, hi = env.bounds_over(a, b)
        g = np.sin(np.linspace(a, b, 2001))
        assert lo <= g.min() + 1e-12 and g.max() <= hi + 1e-12


@pytest.mark.parametrize("interval", [(-0.3, 0.4), (-1.2, 1.0), (0.25, 0.25)])
def test_encoding_matches_envelope_at_fixed_points(interval):
    """Fixing x, the encoded y ranges exactly over [lower(x), upper(x)]."""
    env = build_envelope(SIN, (-4, 4), 2e-2)
    rng = np.random.default_rng(1)
    for x_val in rng.uniform(interval[0], interval[1], 8):
        m = MilpModel()
        x = m.add_var(*interval)
        y = encode_envelope(m, env, x, interval)
        if m.num_binaries > 12:
            pytest.skip("too many segments to enumerate")
        got = []
        for sense in ("minimize", "maximize"):
            m.set_objective(LinExpr({y: 1.0}), sense)
            got.append(enumerate_milp(m, {x.index: float(x_val)})[0])
        assert got[0] == pytest.approx(float(env.lower(x_val)), abs=1e-8)
        assert got[1] == pytest.approx(float(env.upper(x_val)), abs=1e-8)


def test_encoding_with_solver_on_wide_interval():
    env = build_envelope(SIN, (-4, 4), 1e-3)
    m = MilpModel()
    x = m.add_var(-4, 4)
    y = encode_envelope(m, env, x, (-4, 4))
    m.set_objective(LinExpr({y: 1.0}), "maximize")
    sol = solve(m)
    assert sol.objective_incumbent >= 1.0
    assert sol.objective_incumbent <= 1.0 + 2e-3 + 1e-9
