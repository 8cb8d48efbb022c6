"""Sound inner approximations of backward reachable sets for neural feedback loops.

Balls around sampled states are certified with mixed-integer programs over
a piecewise-linear relaxation of the dynamics; their unions are checked
against start sets and scored by Monte-Carlo coverage.
"""

__version__ = "0.1.0"

from .backreach import (BackreachResult, BallRecord, GoalSet, ReachConfig, RejectionCapError,
                        SobolSampler, min_ball_radius, run_backreach, sample_center)
from .milp import MilpModel, NormBall, Polytope
from .pwl import PwlEnvelope, build_envelope
from .solver import SolveOptions, SolveStatus, check_feasible, solve
from .system import (NeuralFeedbackLoop, NeuralNetwork, load_network, make_dynamics, save_network,
                     simulate)
from .verify import CheckVerdict, CoverageReport, StartSet, check_goal_reaching, estimate_coverage

__all__ = [
    "BackreachResult", "BallRecord", "CheckVerdict", "CoverageReport", "GoalSet", "MilpModel",
    "NeuralFeedbackLoop", "NeuralNetwork", "NormBall", "Polytope", "PwlEnvelope", "ReachConfig",
    "RejectionCapError", "SobolSampler", "SolveOptions", "SolveStatus", "StartSet",
    "build_envelope", "check_feasible", "check_goal_reaching", "estimate_coverage",
    "load_network", "make_dynamics", "min_ball_radius", "run_backreach", "sample_center",
    "save_network", "simulate", "solve",
]
