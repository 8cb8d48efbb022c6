"""Fit the unicycle fixture controller: a 2-10-10-10-1 ReLU network that
imitates the heading law theta = atan2(gy - y, gx - x) toward the goal center.

Deterministic: seeded initialization, grid training data and nonlinear
least squares (scipy trust-region reflective). Rerun to regenerate the
checked-in fixture:

    python3 scripts/fit_policy.py fixtures/unicycle/policy.json
"""

import argparse
import json

import numpy as np
from scipy.optimize import least_squares

from ubreach.system import Layer, NeuralNetwork, save_network

SIZES = [2, 10, 10, 10, 1]


def unpack(theta):
    layers, k = [], 0
    for i, (a, b) in enumerate(zip(SIZES[:-1], SIZES[1:])):
        W = theta[k:k + a * b].reshape(b, a)
        k += a * b
        bias = theta[k:k + b]
        k += b
        layers.append((W, bias, "linear" if i == len(SIZES) - 2 else "relu"))
    return layers


def forward(layers, X):
    z = X
    for W, b, act in layers:
        z = z @ W.T + b
        if act == "relu":
            z = np.maximum(z, 0.0)
    return z[:, 0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--goal", type=float, nargs=2, default=(5.0, 6.5))
    ap.add_argument("--box", type=float, nargs=4, default=(-3.0, 5.0, 0.0, 8.0),
                    help="xmin xmax ymin ymax of the training grid")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    xs = np.linspace(args.box[0], args.box[1], 33)
    ys = np.linspace(args.box[2], args.box[3], 33)
    X = np.array([(x, y) for x in xs for y in ys])
    target = np.arctan2(args.goal[1] - X[:, 1], args.goal[0] - X[:, 0])
    # inputs are used unscaled so the network reads raw state coordinates
    rng = np.random.default_rng(args.seed)
    theta0 = []
    for a, b in zip(SIZES[:-1], SIZES[1:]):
        theta0.append(rng.normal(0.0, np.sqrt(2.0 / a) / 3.0, size=a * b))
        theta0.append(np.full(b, 0.1))
    theta0 = np.concatenate(theta0)
    fit = least_squares(lambda th: forward(unpack(th), X) - target, theta0, method="trf",
                        max_nfev=4000, x_scale="jac")
    rms = float(np.sqrt(np.mean(fit.fun**2)))
    nn = NeuralNetwork([Layer(W, b, act) for W, b, act in unpack(fit.x)])
    save_network(nn, args.out)
    print(json.dumps({"rms_error_rad": rms, "max_error_rad": float(np.max(np.abs(fit.fun))),
                      "nfev": fit.nfev}))


if __name__ == "__main__":
    main()
