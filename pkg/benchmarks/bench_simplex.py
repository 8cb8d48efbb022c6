"""Time the dual-simplex kernels on ball problems of the unicycle fixture.

    python3 benchmarks/bench_simplex.py [--t 3] [--nodes 200] [--repeat 3]

Each backend solves the same exported ball MILP with the same node limit;
node and iteration counts are printed so that runs are comparable.
"""

import argparse
import math
import statistics
import time
from pathlib import Path

import numpy as np

from ubreach.backreach import GoalSet, SobolSampler, initial_ball_model, sample_center
from ubreach.solver import SolveOptions, available_backends, set_backend, solve
from ubreach.system import EnvelopeSet, NeuralFeedbackLoop, load_network, make_dynamics

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "unicycle"


def ball_model(t: int):
    net = load_network(FIXTURE / "policy.json")
    nfl = NeuralFeedbackLoop(make_dynamics("unicycle_heading", {"v": 1.0}), net,
                             np.array([-3.0, 0.0]), np.array([4.5, 8.0]))
    goal = GoalSet.box([4.0, 6.0], [6.0, 7.0])
    x_d = sample_center(SobolSampler(nfl.domain_lo, nfl.domain_hi), goal, nfl, t)
    model, _ = initial_ball_model(nfl, EnvelopeSet(nfl.dynamics.terms, 1e-3), x_d, goal, t,
                                  math.inf)
    return model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t", type=int, default=3)
    ap.add_argument("--nodes", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    model = ball_model(args.t)
    print(f"t={args.t}: {model.num_vars} variables, {model.num_binaries} binaries, "
          f"{len(model.constraints)} rows")
    opts = SolveOptions(node_limit=args.nodes)
    base = None
    for name in available_backends():
        set_backend(name)
        times = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            sol = solve(model, opts)
            times.append(time.perf_counter() - t0)
        med = statistics.median(times)
        base = base or med
        print(f"{name:>7}: {med:7.3f} s median of {args.repeat}  ({base / med:4.1f}x)  "
              f"nodes={sol.stats.nodes} iters={sol.stats.lp_iterations} "
              f"status={sol.status.value} bound={sol.objective_bound:.6g}")


if __name__ == "__main__":
    main()
