import json
import math

import jsonschema
import numpy as np
import pytest
from oracles import affine_ball_radius

from ubreach.backreach import (BackreachResult, GoalSet, ReachConfig, RejectionCapError,
                               SobolSampler, distance_to_domain_boundary, escape_heuristic,
                               min_ball_radius, run_backreach, sample_center)
from ubreach.cli import load_schema
from ubreach.milp import ModelError
from ubreach.solver import SolveOptions
from ubreach.system import EnvelopeSet


def test_sobol_is_deterministic_and_in_box():
    a = SobolSampler([-3, 0], [4.5, 8]).points(0, 64)
    b = SobolSampler([-3, 0], [4.5, 8]).points(0, 64)
    assert np.array_equal(a, b)
    assert np.all(a >= [-3, 0]) and np.all(a < [4.5, 8])
    # point i depends only on i
    assert np.array_equal(SobolSampler([-3, 0], [4.5, 8]).points(10, 5), a[10:15])


def test_sobol_dimension_limit():
    with pytest.raises(ValueError):
        SobolSampler(np.zeros(17), np.ones(17))


def test_empty_goal_rejected():
    from ubreach.milp import Polytope
    with pytest.raises(ModelError):
        GoalSet(Polytope(np.array([[1.0], [-1.0]]), np.array([0.0, -1.0])))


def test_rejection_cap(halving):
    far = GoalSet.box([50.0], [60.0])
    with pytest.raises(RejectionCapError):
        sample_center(SobolSampler([-10], [10]), far, halving, 1, cap=300)


def test_accepted_centers_reach_goal(unicycle, unicycle_goal):
    s = SobolSampler(unicycle.domain_lo, unicycle.domain_hi)
    for _ in range(5):
        x = sample_center(s, unicycle_goal, unicycle, 2)
        assert unicycle_goal.contains(unicycle.simulate(x, 2))[0]


@pytest.mark.parametrize("kw", [dict(k=0, n_samp=1), dict(k=1, n_samp=0),
                                dict(k=1, n_samp=1, rel_tol=0.0), dict(k=1, n_samp=1, p=2),
                                dict(k=1, n_samp=1, probes=-1),
                                dict(k=1, n_samp=1, rejection_cap=0)])
def test_reach_config_validation(kw):
    with pytest.raises(Exception):
        ReachConfig(**kw)


def test_domain_boundary_distance():
    assert distance_to_domain_boundary(np.array([1.0, 2.0]), np.zeros(2), np.array([3.0, 3.0])) == 1.0


@pytest.mark.parametrize("t", [1, 2])
@pytest.mark.parametrize("p", [math.inf, 1])
def test_affine_radius_matches_closed_form(halving, unit_goal, t, p):
    envs = EnvelopeSet((), 1e-6)
    bs = min_ball_radius(halving, envs, np.array([0.0]), unit_goal, t, p)
    assert bs.status == "Optimal"
    assert bs.eps_lb == pytest.approx(affine_ball_radius(0.0, t), abs=1e-6)


def test_affine_off_center(halving, unit_goal):
    envs = EnvelopeSet((), 1e-6)
    bs = min_ball_radius(halving, envs, np.array([1.0]), unit_goal, 2, math.inf)
    assert bs.eps_lb == pytest.approx(affine_ball_radius(1.0, 2), abs=1e-6)


def test_radius_clipped_at_domain(halving, unit_goal):
    # at t=4 the preimage [-16, 16] is wider than D = [-10, 10]
    envs = EnvelopeSet((), 1e-6)
    bs = min_ball_radius(halving, envs, np.array([7.0]), unit_goal, 4, math.inf)
    assert bs.eps_lb == pytest.approx(3.0)


def test_escape_heuristic_upper_bounds_optimum(halving, unit_goal):
    eps_h, x_h = escape_heuristic(halving, unit_goal, np.array([0.5]), 1, math.inf)
    assert eps_h >= affine_ball_radius(0.5, 1) - 1e-9
    assert eps_h == pytest.approx(1.5, abs=1e-6)
    assert abs(x_h[0]) >= 2 - 1e-6


def test_affine_run_and_result_round_trip(halving, unit_goal):
    cfg = ReachConfig(k=2, n_samp=2, rel_tol=1e-6)
    res = run_backreach(halving, unit_goal, cfg)
    for step in res.steps:
        assert len(step.records) == 2
        for rec in step.records:
            assert rec.ball.radius == rec.eps_lb
            want = affine_ball_radius(float(rec.ball.center[0]), step.t)
            assert rec.eps_lb == pytest.approx(want, abs=1e-6)
    doc = json.loads(json.dumps(res.to_dict()))
    jsonschema.validate(doc, load_schema("result"))
    back = BackreachResult.from_dict(doc)
    assert back.to_dict() == res.to_dict()
    assert res.config_hash == back.config_hash


def test_empty_step_recorded(halving):
    # nothing in D = [-10, 10] reaches [50, 60]
    cfg = ReachConfig(k=1, n_samp=2, rejection_cap=64)
    res = run_backreach(halving, GoalSet.box([50.0], [60.0]), cfg)
    assert res.steps[0].records == [] and res.steps[0].errors


def test_unicycle_balls_are_sound(unicycle, unicycle_goal):
    cfg = ReachConfig(k=2, n_samp=3, rel_tol=1e-3, solver=SolveOptions(node_limit=400))
    res = run_backreach(unicycle, unicycle_goal, cfg)
    rng = np.random.default_rng(0)
    n = 0
    for step in res.steps:
        assert not step.errors
        for ball in step.balls:
            pts = ball.sample_interior(rng, 1000)
            end = unicycle.simulate(pts, step.t)
            assert np.all(unicycle_goal.contains(end, 1e-9))
            n += 1
    assert n == 6
