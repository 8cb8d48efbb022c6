import math

import jsonschema
import numpy as np
import pytest
from helpers import INF, result_from_balls
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ball_union_membership

from ubreach.backreach import GoalSet, ReachConfig, run_backreach
from ubreach.cli import load_schema
from ubreach.milp import ModelError, Polytope
from ubreach.verify import (CoverageReport, StartSet, check_goal_reaching, coverage_csv,
                            estimate_coverage, in_union)

BOX = ([-10.0, -10.0], [10.0, 10.0])


def test_boundary_contact_is_not_subset():
    # the start set touches the ball's boundary: reported with zero clearance
    res = result_from_balls([[([0, 0], 1.0, INF)]], *BOX)
    v = check_goal_reaching(StartSet.box([0, 0], [1, 1]), res)
    assert not v.subset and v.clearance == pytest.approx(0.0, abs=1e-9)


def test_start_set_validation():
    with pytest.raises(ModelError):
        StartSet(Polytope(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0.0, -1.0])))
    with pytest.raises(ModelError):
        StartSet(Polytope(np.array([[1.0, 0.0]]), np.array([1.0])))
    s = StartSet.box([0, 1], [2, 3])
    assert s.lo.tolist() == [0, 1] and s.hi.tolist() == [2, 3]
    with pytest.raises(ModelError):
        s.check_within([0.5, 0], [5, 5])


def test_box_inside_one_ball():
    res = result_from_balls([[([0, 0], 1.0, INF)]], *BOX)
    v = check_goal_reaching(StartSet.box([-0.5, -0.5], [0.5, 0.5]), res)
    assert v.subset and v.witness is None


def test_covered_only_by_the_union():
    # two overlapping boxes cover [-1.5, 1.5] x [-0.5, 0.5]; neither alone does
    res = result_from_balls([[([-1, 0], 1.2, INF)], [([1, 0], 1.2, INF)]], *BOX)
    start = StartSet.box([-1.5, -0.5], [1.5, 0.5])
    assert check_goal_reaching(start, res).subset
    single = result_from_balls([[([-1, 0], 1.2, INF)]], *BOX)
    assert not check_goal_reaching(start, single).subset


def test_witness_is_outside_every_ball():
    res = result_from_balls([[([0, 0], 1.0, INF), ([1.5, 0], 0.4, 1)]], *BOX)
    start = StartSet.box([-0.5, -0.5], [2.5, 0.5])
    v = check_goal_reaching(start, res)
    assert not v.subset
    w = v.witness
    assert start.contains(w, 1e-9)[0]
    for _, b in res.all_balls():
        assert b.distance(w)[0] >= b.radius - 1e-9
    assert v.clearance >= 0
    jsonschema.validate(v.to_dict(), load_schema("verdict"))


def test_general_polytope_start_set():
    # triangle strictly inside the box [-0.15, 1.05]^2
    tri = Polytope(np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]), np.array([0.0, 0.0, 0.9]))
    res = result_from_balls([[([0.45, 0.45], 0.6, INF)]], *BOX)
    assert check_goal_reaching(StartSet(tri), res).subset
    wide = Polytope(np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]), np.array([0.0, 0.0, 1.5]))
    assert not check_goal_reaching(StartSet(wide), res).subset


def test_dimension_mismatch():
    res = result_from_balls([[([0], 1.0, INF)]], [-1], [1])
    with pytest.raises(ModelError):
        check_goal_reaching(StartSet.box([0, 0], [1, 1]), res)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_checker_agrees_with_dense_sampling(seed):
    """NotSubset exactly when some of 1e5 samples are uncovered, up to a thin boundary layer."""
    rng = np.random.default_rng(seed)
    balls = [(rng.uniform(-1, 1, 2), float(rng.uniform(0.3, 1.0)), rng.choice([1, INF]))
             for _ in range(int(rng.integers(1, 5)))]
    res = result_from_balls([balls], *BOX)
    lo = rng.uniform(-1, 0.5, 2)
    start = StartSet.box(lo, lo + rng.uniform(0.05, 0.8, 2))
    v = check_goal_reaching(start, res)
    pts = start.sample(rng, 100_000)
    miss = ~ball_union_membership(balls, pts)
    if v.subset:
        assert not miss.any()
    else:
        # a witness exists; sampling finds one unless the uncovered part is a sliver
        shrunk = [(c, r - 1e-3, p) for c, r, p in balls]
        deep = ~ball_union_membership(shrunk, pts)
        assert miss.any() or not deep.any() or v.clearance < 1e-3


def test_coverage_counts_and_undefined(halving, unit_goal):
    res = result_from_balls([[([0], 2.0, INF)], []], [-10], [10])
    rep = estimate_coverage(halving, unit_goal, res, n_samples=4000, seed=1)
    assert rep.fractions[0] == pytest.approx(1.0)
    assert rep.fractions[1] == 0.0  # members exist, no balls
    far = GoalSet.box([50.0], [60.0])
    rep2 = estimate_coverage(halving, far, res, n_samples=500, seed=1)
    assert rep2.undefined_steps == [1, 2] and rep2.union_fraction is None
    csv = coverage_csv([rep2])
    assert csv.splitlines()[1] == "1,undefined,undefined,undefined"
    jsonschema.validate({"runs": [rep.to_dict()]}, load_schema("coverage"))
    assert CoverageReport.from_dict(rep.to_dict()) == rep


def test_coverage_is_seeded(halving, unit_goal):
    res = result_from_balls([[([0.5], 1.0, INF)]], [-10], [10])
    a = estimate_coverage(halving, unit_goal, res, 3000, seed=7)
    b = estimate_coverage(halving, unit_goal, res, 3000, seed=7)
    assert a == b
    # members are uniform on [-2, 2]; the ball [-0.5, 1.5] holds half of them
    assert a.fractions[0] == pytest.approx(0.5, abs=0.05)


def test_affine_coverage_with_computed_balls(halving, unit_goal):
    res = run_backreach(halving, unit_goal, ReachConfig(k=2, n_samp=8, rel_tol=1e-6))
    rep = estimate_coverage(halving, unit_goal, res, 20_000, seed=0)
    for f in rep.fractions:
        assert f >= 0.9
    assert rep.union_fraction >= 0.9


def test_in_union_matches_oracle():
    rng = np.random.default_rng(5)
    balls = [(rng.uniform(-1, 1, 2), 0.5, p) for p in (1, INF, 1)]
    res = result_from_balls([balls], *BOX)
    pts = rng.uniform(-2, 2, size=(5000, 2))
    nb = [b for _, b in res.all_balls()]
    assert np.array_equal(in_union(nb, pts), ball_union_membership(balls, pts))
