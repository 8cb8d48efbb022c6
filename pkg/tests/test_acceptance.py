"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The unicycle runs are shared through module fixtures: the k = 7, n_samp = 15
result feeds both the soundness suite and the coverage comparison.
"""

import json
import math
import shutil
import time

import numpy as np
import pytest
from helpers import INF, result_from_balls
from oracles import affine_ball_radius, ball_union_membership, enumerate_milp

from conftest import ACCEPTANCE_LINES, FIXTURES
from ubreach.backreach import BackreachResult, min_ball_radius
from ubreach.cli import Run, main
from ubreach.milp import LinExpr, MilpModel, Polytope, add_max, add_relu
from ubreach.pwl import BUILTINS, build_envelope
from ubreach.solver import solve
from ubreach.system import EnvelopeSet
from ubreach.verify import StartSet, check_goal_reaching, estimate_coverage


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"


def unicycle_config(tmp_path, name, **reach):
    doc = json.loads((FIXTURES / "unicycle" / "config.json").read_text())
    doc["system"]["network"] = str(FIXTURES / "unicycle" / "policy.json")
    doc["reach"].update(reach)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(doc, indent=1))
    return path


def run_reach(config, out):
    t0 = time.perf_counter()
    code = main(["reach", str(config), "-o", str(out)])
    assert code == 0, f"reach exited with {code}"
    return time.perf_counter() - t0


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def reach15(work):
    cfg = unicycle_config(work, "n15", n_samp=15)
    out = work / "n15.result.json"
    wall = run_reach(cfg, out)
    return cfg, out, wall


# -- 1 -----------------------------------------------------------------------------


def _relu_instance(rng):
    n_in = 2
    widths = [int(rng.integers(2, 5)), int(rng.integers(1, 4))]
    m = MilpModel()
    xs = m.add_vars(-np.ones(n_in), np.ones(n_in))
    cur, lo, hi = xs, -np.ones(n_in), np.ones(n_in)
    layers = []
    for w in widths:
        W = rng.normal(size=(w, len(cur)))
        b = rng.normal(scale=0.3, size=w)
        layers.append((W, b))
        nxt, nlo, nhi = [], [], []
        for i in range(w):
            Wp, Wn = np.maximum(W[i], 0), np.minimum(W[i], 0)
            l = float(b[i] + Wp @ lo + Wn @ hi)
            u = float(b[i] + Wp @ hi + Wn @ lo)
            z = m.add_var(l, u)
            m.add_constraint(z - LinExpr.dot(W[i], cur, b[i]), "==", 0.0)
            nxt.append(add_relu(m, z, (l, u)))
            nlo.append(max(l, 0.0))
            nhi.append(max(u, 0.0))
        cur, lo, hi = nxt, np.array(nlo), np.array(nhi)
    out = LinExpr.dot(rng.normal(size=len(cur)), cur)

    def f(x):
        h = np.asarray(x, float)
        for W, b in layers:
            h = np.maximum(W @ h + b, 0.0)
        return h

    coef = np.array([out.terms.get(v, 0.0) for v in cur])
    return m, xs, out, lambda x: float(coef @ f(x))


def _max_instance(rng):
    k = int(rng.integers(2, 7))
    m = MilpModel()
    lo = rng.uniform(-3, 0, k)
    hi = lo + rng.uniform(0.2, 4, k)
    xs = m.add_vars(lo, hi)
    t = add_max(m, xs, list(zip(lo, hi)))
    # a linear side objective keeps the free optimum away from a trivial corner
    w = rng.normal(size=k)
    out = LinExpr({t: 1.0}) + LinExpr.dot(w, xs)
    return m, xs, out, lambda x: float(np.max(x) + w @ x)


def test_criterion_1_encodings_match_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    count = 0
    while count < 200:
        make = _relu_instance if count % 2 == 0 else _max_instance
        m, xs, out, f = make(rng)
        if not 1 <= m.num_binaries <= 10:
            continue
        x = np.array([rng.uniform(*m.bounds(v)) for v in xs])
        fixed = {v.index: float(val) for v, val in zip(xs, x)}
        for sense in ("minimize", "maximize"):
            m.set_objective(out, sense)
            # fixed inputs: the encoding must pin the output to the true value
            val, _ = enumerate_milp(m, fixed)
            worst = max(worst, abs(val - f(x)))
            # free inputs: branch and bound against enumeration
            want, _ = enumerate_milp(m)
            worst = max(worst, abs(solve(m).objective_incumbent - want))
        count += 1
    wall = time.perf_counter() - t0
    ok = worst <= 1e-6 and wall < 60
    record(1, ok, f"{count} instances, max deviation {worst:.2e}, {wall:.1f} s")
    assert ok


# -- 2 -----------------------------------------------------------------------------


def test_criterion_2_envelope_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    violations = 0
    details = []
    ok_err = True
    for name in ("sin", "cos"):
        g = BUILTINS[name]
        for tol in (1e-3, 1e-6):
            env = build_envelope(g, (-4.0, 4.0), tol)
            xs = np.concatenate([np.linspace(-4, 4, 50_000), rng.uniform(-4, 4, 50_000)])
            gv = g(xs)
            violations += int(np.sum(env.lower(xs) > gv) + np.sum(gv > env.upper(xs)))
            ok_err &= env.certified_rel_error <= tol
            # the certificate is honest: the measured gap never exceeds it
            ok_err &= env.max_gap() / 2.0 <= env.certified_rel_error + 1e-15
            details.append(f"{name}@{tol:g}: {env.n_segments} seg, err {env.certified_rel_error:.2e}")
    wall = time.perf_counter() - t0
    ok = violations == 0 and ok_err and wall < 60
    record(2, ok, f"{violations} violations in 4x1e5 samples; {'; '.join(details)}; {wall:.1f} s")
    assert ok


# -- 3 -----------------------------------------------------------------------------


def test_criterion_3_affine_exactness(halving, unit_goal):
    t0 = time.perf_counter()
    envs = EnvelopeSet((), 1e-6)
    radii = [min_ball_radius(halving, envs, np.array([0.0]), unit_goal, t, INF).eps_lb
             for t in (1, 2)]
    wall = time.perf_counter() - t0
    want = [affine_ball_radius(0.0, 1), affine_ball_radius(0.0, 2)]
    assert want == [2.0, 4.0]
    ok = all(abs(r - w) <= 1e-5 for r, w in zip(radii, want)) and wall < 10
    record(3, ok, f"radii {radii[0]:.9f}, {radii[1]:.9f} (want 2, 4); {wall:.2f} s")
    assert ok


# -- 4 -----------------------------------------------------------------------------


def test_criterion_4_unicycle_soundness(reach15):
    cfg, out, wall = reach15
    run = Run(cfg)
    res = BackreachResult.from_dict(json.loads(out.read_text()))
    rng = np.random.default_rng(404)
    bad = 0
    n_balls = 0
    for step in res.steps:
        for ball in step.balls:
            c, r = ball.center, ball.radius
            corners = c + r * np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], float)
            pts = np.vstack([ball.sample_interior(rng, 995), c[None, :], corners])
            end = run.nfl.simulate(pts, step.t)
            bad += int(np.sum(~run.goal.contains(end, 1e-9)))
            n_balls += 1
    errors = sum(len(s.errors) for s in res.steps)
    shape_ok = len(res.steps) == 7 and all(len(s.records) <= 15 for s in res.steps)
    ok = bad == 0 and errors == 0 and shape_ok
    record(4, ok, f"{n_balls} balls x 1000 points, {bad} violations, {errors} ball errors; "
                  f"reach took {wall / 60:.1f} min (informational)")
    assert ok


# -- 5 -----------------------------------------------------------------------------


def test_criterion_5_coverage_grows_with_n_samp(work, reach15):
    cfg15, out15, _ = reach15
    outs = {}
    walls = {}
    for n in (5, 25):
        cfg = unicycle_config(work, f"n{n}", n_samp=n)
        outs[n] = work / f"n{n}.result.json"
        walls[n] = run_reach(cfg, outs[n])
    outs[15] = out15
    run = Run(cfg15)
    t0 = time.perf_counter()
    union = {}
    for n in (5, 15, 25):
        res = BackreachResult.from_dict(json.loads(outs[n].read_text()))
        rep = estimate_coverage(run.nfl, run.goal, res, 10_000, 0)
        union[n] = rep.union_fraction
    post = time.perf_counter() - t0
    ok = (union[5] is not None and union[15] >= union[5] - 0.05
          and union[25] >= union[15] - 0.05 and post < 120)
    record(5, ok, f"union coverage {union[5]:.3f} -> {union[15]:.3f} -> {union[25]:.3f} "
                  f"(n_samp 5/15/25); coverage {post:.1f} s; reach {walls[5] / 60:.1f} and "
                  f"{walls[25] / 60:.1f} min")
    assert ok


# -- 6 -----------------------------------------------------------------------------

BALLS = [((0.0, 0.0), 1.0, INF), ((1.5, 0.0), 1.0, INF), ((0.0, 2.5), 1.0, 1),
         ((-2.0, -2.0), 0.5, INF)]


def _box(lo, hi):
    return StartSet.box(lo, hi)


def _tri(a, b, c):
    """Triangle with counter-clockwise vertices a, b, c."""
    pts = np.array([a, b, c], float)
    rows, rhs = [], []
    for i in range(3):
        p, q = pts[i], pts[(i + 1) % 3]
        nrm = np.array([q[1] - p[1], p[0] - q[0]])
        rows.append(nrm)
        rhs.append(nrm @ p)
    return StartSet(Polytope(np.array(rows), np.array(rhs)))


# (name, start set, covered by the union?)
CASES = [
    ("inside one box", _box([-0.5, -0.5], [0.5, 0.5]), True),
    ("union only", _box([0.0, -0.5], [2.0, 0.5]), True),
    ("union only, wide", _box([-0.9, -0.9], [2.4, 0.9]), True),
    ("inside diamond", _box([-0.3, 2.2], [0.3, 2.8]), True),
    ("triangle over union", _tri((-0.8, -0.8), (2.3, -0.8), (-0.8, 0.8)), True),
    ("inside small box", _box([-2.4, -2.4], [-1.6, -1.6]), True),
    ("overlap strip", _box([0.6, -0.9], [0.9, 0.9]), True),
    ("diamond core", _box([-0.4, 2.1], [0.4, 2.9]), True),
    ("inside second box", _box([1.0, -0.95], [2.0, 0.95]), True),
    ("L1 polytope in box", StartSet(Polytope(np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], float),
                                             np.full(4, 0.9))), True),
    ("gap between box and diamond", _box([-0.2, 0.5], [0.2, 1.8]), False),
    ("far away", _box([3.0, 3.0], [4.0, 4.0]), False),
    ("across right edge", _box([0.5, -0.5], [3.0, 0.5]), False),
    ("across left edge", _box([-1.2, 0.0], [0.0, 0.5]), False),
    ("big triangle", _tri((-0.5, -0.5), (3.0, -0.5), (-0.5, 3.0)), False),
    ("between boxes diagonal", _box([-2.4, -2.4], [-0.5, -0.5]), False),
    ("above the union", _box([0.9, 1.05], [1.1, 1.2]), False),
    ("whole plane patch", _box([-5.0, -5.0], [5.0, 5.0]), False),
    ("right edge sliver", _box([2.4, -0.1], [2.6, 0.1]), False),
    ("thin strip above seam", _box([0.99, 1.0], [1.01, 1.05]), False),
    ("diamond edge", _box([0.5, 2.3], [1.0, 2.7]), False),
    ("wider than diamond", _box([-0.6, 2.0], [0.6, 3.0]), False),
    ("corner gap", _box([-1.4, -1.4], [-0.6, -0.6]), False),
    ("triangle poking out", _tri((0.0, 0.0), (2.0, 0.0), (1.0, 1.5)), False),
]


def test_criterion_6_checker_agrees_with_sampling():
    res = result_from_balls([BALLS[:2], BALLS[2:]], [-6, -6], [6, 6])
    rng = np.random.default_rng(606)
    wrong = []
    false_subset = 0
    slowest = 0.0
    for name, start, truth in CASES:
        v = check_goal_reaching(start, res)
        slowest = max(slowest, v.wall_time)
        pts = start.sample(rng, 100_000)
        uncovered = int(np.sum(~ball_union_membership(BALLS, pts)))
        sampled_subset = uncovered == 0
        if v.subset and not sampled_subset:
            false_subset += 1
        if v.subset != sampled_subset or v.subset != truth:
            wrong.append(name)
        if not v.subset:
            w = v.witness
            assert start.contains(w, 1e-9)[0]
            assert all(b.distance(w)[0] >= b.radius - 1e-9 for _, b in res.all_balls())
    ok = not wrong and false_subset == 0 and slowest < 1.0 and len(CASES) >= 20
    record(6, ok, f"{len(CASES)} start sets, {len(wrong)} disagreements {wrong}, "
                  f"{false_subset} false Subset, slowest check {slowest * 1000:.0f} ms")
    assert ok


# -- 7 -----------------------------------------------------------------------------


def _coverage_bytes(config, out, tmp, tag):
    cov = tmp / f"{tag}.coverage.csv"
    cj = tmp / f"{tag}.coverage.json"
    assert main(["coverage", str(config), str(out), "-o", str(cov), "--json", str(cj)]) == 0
    return [out.read_bytes(), cov.read_bytes(), cj.read_bytes()]


def _pipeline(config, tmp, tag):
    out = tmp / f"{tag}.result.json"
    assert main(["reach", str(config), "-o", str(out)]) == 0
    return _coverage_bytes(config, out, tmp, tag)


def test_criterion_7_determinism(tmp_path, reach15):
    affine = tmp_path / "affine"
    affine.mkdir()
    for f in ("config.json", "identity.json"):
        shutil.copy(FIXTURES / "affine" / f, affine / f)
    cfg = affine / "config.json"
    same = [_pipeline(cfg, tmp_path, "affine-a") == _pipeline(cfg, tmp_path, "affine-b")]
    # the first unicycle run is the one criterion 4 already made
    ucfg, uout, _ = reach15
    first = _coverage_bytes(ucfg, uout, tmp_path, "unicycle-a")
    same.append(first == _pipeline(ucfg, tmp_path, "unicycle-b"))
    ok = all(same)
    record(7, ok, f"byte-identical reach + coverage outputs: affine {same[0]}, "
                  f"unicycle fixture (k=7, n_samp=15) {same[1]}")
    assert ok
