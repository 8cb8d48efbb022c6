"""Command-line front end.

Exit codes: 0 success, 1 computation error, 2 configuration or input error,
3 start set not covered (``check`` only).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema
import numpy as np

from . import __version__
from .backreach import (BackreachResult, GoalSet, ReachConfig, SobolSampler, initial_ball_model,
                        run_backreach, sample_center)
from .milp import ModelError, Polytope, write_lp
from .plot import PlotError, PlotSpec, geometry_csv, render_svg
from .solver import ExternalSolver, SolveOptions, set_backend
from .system import (EnvelopeSet, NetworkFormatError, NeuralFeedbackLoop, NeuralNetwork,
                     make_dynamics)
from .verify import StartSet, check_goal_reaching, coverage_csv, estimate_coverage

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG, EXIT_NOT_SUBSET = 0, 1, 2, 3

log = logging.getLogger("ubreach")


class ConfigError(Exception):
    pass


# -- schemas and files -----------------------------------------------------------

def load_schema(name: str) -> dict:
    text = resources.files("ubreach").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc, name: str, what: str) -> None:
    try:
        jsonschema.validate(doc, load_schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise ConfigError(f"{what}: {where}: {exc.message}") from None


def read_json(path, name: str | None = None, what: str | None = None):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if name is not None:
        validate(doc, name, what or str(path))
    return doc


def dump_json(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def write_output(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def region(d: Mapping) -> Polytope:
    if "lo" in d:
        lo, hi = np.asarray(d["lo"], float), np.asarray(d["hi"], float)
        if lo.shape != hi.shape:
            raise ConfigError(f"box bounds have different lengths {lo.size} and {hi.size}")
        if np.any(lo > hi):
            raise ConfigError(f"box has lo > hi: {lo.tolist()} / {hi.tolist()}")
        return Polytope.box(lo, hi)
    return Polytope.from_dict(d)


# -- run configuration -----------------------------------------------------------

class Run:
    """A validated run configuration with the objects it describes."""

    def __init__(self, path):
        self.path = Path(path)
        self.doc = read_json(self.path, "run_config", f"config {self.path}")
        self.base = self.path.parent
        sysd = self.doc["system"]
        net_path = self.base / sysd["network"]
        if not net_path.exists():
            raise ConfigError(f"network file not found: {net_path}")
        net_doc = read_json(net_path, "network", f"network {net_path}")
        try:
            net = NeuralNetwork.from_dict(net_doc)
            dyn = make_dynamics(sysd["dynamics"], sysd.get("params", {}))
            dom = sysd["domain"]
            self.nfl = NeuralFeedbackLoop(dyn, net, np.asarray(dom["lo"], float),
                                          np.asarray(dom["hi"], float))
            self.goal = GoalSet(region(self.doc["goal"]))
            if self.goal.polytope.dim != self.nfl.state_dim:
                raise ConfigError(f"goal has dimension {self.goal.polytope.dim}, states have "
                                  f"{self.nfl.state_dim}")
            self.reach = reach_config(self.doc["reach"])
        except (ModelError, NetworkFormatError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        self.solver = make_solver(self.doc["reach"].get("solver", {}))

    def output(self, key: str, default: str) -> Path:
        out = self.doc.get("outputs", {}).get(key)
        return self.base / out if out else Path(default)

    def echo(self) -> dict:
        """Config content that determines the result (paths excluded)."""
        sysd = dict(self.doc["system"])
        blob = json.dumps(self.nfl.controller.to_dict(), sort_keys=True, separators=(",", ":"))
        sysd["network"] = {"sha256": hashlib.sha256(blob.encode()).hexdigest()}
        return {"system": sysd, "goal": self.goal.polytope.to_dict(), "reach": self.reach.to_dict()}


def reach_config(d: Mapping) -> ReachConfig:
    sd = {k: v for k, v in d.get("solver", {}).items() if k not in ("backend", "command", "lpKernel")}
    return ReachConfig(k=d["k"], n_samp=d["n_samp"], p=d.get("p", "inf"),
                       rel_tol=d.get("relTol", 1e-6), rejection_cap=d.get("rejectionCap", 100000),
                       solver=SolveOptions.from_dict({k: (math.inf if v is None else v)
                                                      for k, v in sd.items()}),
                       heuristic_samples=d.get("heuristicSamples", 2048),
                       probes=d.get("probes", 6))


def make_solver(d: Mapping):
    kernel = d.get("lpKernel", "auto")
    if kernel != "auto":
        try:
            set_backend(kernel)
        except (ImportError, ValueError) as exc:
            raise ConfigError(f"lpKernel {kernel!r}: {exc}") from None
    if d.get("backend", "reference") == "external":
        if "command" not in d:
            raise ConfigError("external solver backend needs a 'command' list")
        return ExternalSolver(d["command"])
    return None


def load_result(path) -> BackreachResult:
    doc = read_json(path, "result", f"result {path}")
    try:
        return BackreachResult.from_dict(doc)
    except (ModelError, KeyError, ValueError) as exc:
        raise ConfigError(f"result {path}: {exc}") from None


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"not a comma-separated vector: {text!r}") from None


def start_sets_from_args(args, run: Run | None = None) -> list[tuple[str, StartSet]]:
    sets: list[tuple[str, Polytope]] = []
    for path in args.set or []:
        doc = read_json(path, "start_set", f"start set {path}")
        sets.append((Path(path).stem, region(doc)))
    for spec in args.box or []:
        lo, sep, hi = spec.partition(":")
        if not sep:
            raise ConfigError(f"box must look like LO:HI with comma-separated corners, got {spec!r}")
        sets.append((f"box[{spec}]", region({"lo": parse_vector(lo).tolist(),
                                             "hi": parse_vector(hi).tolist()})))
    if run is not None:
        for item in run.doc.get("check", {}).get("startSets", []):
            sets.append((item["name"], region(item["set"])))
    out = []
    for name, P in sets:
        try:
            out.append((name, StartSet(P)))
        except ModelError as exc:
            raise ConfigError(f"start set {name}: {exc}") from None
    return out


# -- commands --------------------------------------------------------------------

def cmd_reach(args) -> int:
    run = Run(args.config)
    out = Path(args.out) if args.out else run.output("result", f"{run.path.stem}.result.json")
    timings = Path(args.timings) if args.timings else run.output(
        "timings", str(out.with_suffix("")) + ".timings.json")

    def report(t, rec):
        log.info("t=%d ball at %s radius %.6g (%s)", t, np.round(rec.ball.center, 4).tolist(),
                 rec.ball.radius, rec.status)

    result = run_backreach(run.nfl, run.goal, run.reach, run.solver, run.echo(), report)
    doc = result.to_dict()
    validate(doc, "result", "result output")
    write_output(out, dump_json(doc))
    write_output(timings, dump_json(result.timings()))
    for s in result.steps:
        print(f"t={s.t}: {len(s.records)} balls, {s.wall_time:.2f} s")
    print(f"wrote {out} and {timings}")
    errors = [(s.t, e) for s in result.steps for e in s.errors]
    for t, e in errors:
        print(f"error at t={t}: {e}", file=sys.stderr)
    return EXIT_COMPUTE if errors else EXIT_OK


def cmd_check(args) -> int:
    result = load_result(args.result)
    run = Run(args.config) if args.config else None
    sets = start_sets_from_args(args, run)
    if not sets:
        raise ConfigError("no start set given (use --set, --box or --config)")
    opts = run.reach.solver if run else SolveOptions()
    solver = run.solver if run else None
    verdicts = []
    worst = EXIT_OK
    for name, S in sets:
        try:
            S.check_within(*result.domain)
        except ModelError as exc:
            raise ConfigError(f"start set {name}: {exc}") from None
        v = check_goal_reaching(S, result, opts, solver)
        d = {"name": name, **v.to_dict()}
        validate(d, "verdict", "verdict output")
        verdicts.append(d)
        line = f"{name}: {v.label} ({v.n_balls} balls, {v.wall_time:.3f} s)"
        if not v.subset:
            line += f" witness {v.witness.tolist()}"
            worst = EXIT_NOT_SUBSET
        print(line)
    if args.out:
        write_output(args.out, dump_json(verdicts if len(verdicts) > 1 else verdicts[0]))
    return worst


def cmd_coverage(args) -> int:
    run = Run(args.config)
    cov = run.doc.get("coverage", {})
    n = args.samples if args.samples is not None else cov.get("samples", 10000)
    seed = args.seed if args.seed is not None else cov.get("seed", 0)
    if n < 1:
        raise ConfigError(f"sample count must be at least 1, got {n}")
    if seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {seed}")
    reports = []
    for path in args.result:
        result = load_result(path)
        if result.dim != run.nfl.state_dim:
            raise ConfigError(f"result {path} has dimension {result.dim}, config has "
                              f"{run.nfl.state_dim}")
        reports.append(estimate_coverage(run.nfl, run.goal, result, n, seed))
    text = coverage_csv(reports)
    out = Path(args.out) if args.out else run.output("coverage", "")
    if str(out) not in ("", "."):
        write_output(out, text)
    else:
        sys.stdout.write(text)
    if args.json:
        doc = {"runs": [r.to_dict() for r in reports]}
        validate(doc, "coverage", "coverage output")
        write_output(args.json, dump_json(doc))
    for r in reports:
        if r.undefined_steps:
            print(f"n_samp={r.n_samp}: no true-set samples at t={r.undefined_steps}; "
                  f"fraction undefined", file=sys.stderr)
    return EXIT_OK


def cmd_plot(args) -> int:
    result = load_result(args.result)
    steps = [int(v) for v in args.steps.split(",")] if args.steps else None
    sets = [(name, S.polytope) for name, S in start_sets_from_args(args)]
    spec = PlotSpec(steps, tuple(args.xlim) if args.xlim else None,
                    tuple(args.ylim) if args.ylim else None, sets, args.title or "")
    try:
        svg = render_svg(result, spec)
    except PlotError as exc:
        raise ConfigError(str(exc)) from None
    write_output(args.out, svg)
    csv_path = Path(args.csv) if args.csv else Path(args.out).with_suffix(".csv")
    write_output(csv_path, geometry_csv(result))
    print(f"wrote {args.out} and {csv_path}")
    return EXIT_OK


def cmd_export_lp(args) -> int:
    run = Run(args.config)
    t = args.t
    if not 1 <= t <= run.reach.k:
        raise ConfigError(f"step {t} is outside 1..{run.reach.k}")
    if args.center:
        x_d = parse_vector(args.center)
        if x_d.size != run.nfl.state_dim:
            raise ConfigError(f"center has {x_d.size} entries, states have {run.nfl.state_dim}")
    else:
        sampler = SobolSampler(run.nfl.domain_lo, run.nfl.domain_hi)
        for _ in range(args.sample + 1):
            x_d = sample_center(sampler, run.goal, run.nfl, t, run.reach.rejection_cap)
    envelopes = EnvelopeSet(run.nfl.dynamics.terms, run.reach.rel_tol)
    model, eps_h = initial_ball_model(run.nfl, envelopes, x_d, run.goal, t, run.reach.p,
                                      run.reach.heuristic_samples)
    text = write_lp(model)
    header = (f"\\ ball problem t={t} center={x_d.tolist()} p={run.reach.to_dict()['p']}"
              f" heuristic radius={eps_h!r}\n")
    write_output(args.out, header + text)
    print(f"wrote {args.out}: {model.num_vars} variables, {model.num_binaries} binaries, "
          f"{len(model.constraints)} constraints")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ubreach", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log each ball as it is solved")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reach", help="compute ball unions for t = 1..k")
    p.add_argument("config")
    p.add_argument("-o", "--out", help="result JSON (default: outputs.result)")
    p.add_argument("--timings", help="timing sidecar JSON")
    p.set_defaults(func=cmd_reach)

    def add_sets(q):
        q.add_argument("--set", action="append", metavar="FILE", help="start set JSON")
        q.add_argument("--box", action="append", metavar="LO:HI",
                       help="box start set, e.g. --box=-1.5,4.1:-1,4.6")

    p = sub.add_parser("check", help="is a start set covered by the ball unions?")
    p.add_argument("result")
    add_sets(p)
    p.add_argument("--config", help="run config; adds its check.startSets and solver options")
    p.add_argument("-o", "--out", help="verdict JSON")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("coverage", help="Monte-Carlo coverage of the true backward sets")
    p.add_argument("config")
    p.add_argument("result", nargs="+", help="one result per CSV row")
    p.add_argument("-n", "--samples", type=int, help="uniform samples per step")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--out", help="CSV path (default: outputs.coverage or stdout)")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("plot", help="SVG figure of a 2-D result")
    p.add_argument("result")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--steps", help="comma-separated steps to draw (default: all)")
    p.add_argument("--xlim", nargs=2, type=float)
    p.add_argument("--ylim", nargs=2, type=float)
    p.add_argument("--title")
    p.add_argument("--csv", help="ball geometry CSV (default: next to the SVG)")
    add_sets(p)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("export-lp", help="write one ball problem in CPLEX-LP format")
    p.add_argument("config")
    p.add_argument("-t", type=int, required=True, help="step count")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--center", help="comma-separated ball center")
    g.add_argument("--sample", type=int, default=0,
                   help="use the n-th accepted Sobol center (default 0)")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_export_lp)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything past configuration is a computation failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
