#!/usr/bin/env python3
"""Relaxation-factor sweep for the implicit-fairing Jacobi solver.

For a chosen graph and smoothing scale, sweeps omega across and beyond the
guaranteed-convergent range (0, 2/(2-alpha)), printing the predicted
spectral radius, the measured error-decay rate, and the iteration count to
tolerance. Shows where the optimum sits and where divergence begins.
"""

import argparse
import sys

from wjmixer.fairing import (
    ConvergenceError, FairingProblem, iteration_spectral_radius,
    observed_decay_rate, solve_jacobi,
)
from wjmixer.graph import build_operators, human36m_topology, load_topology
from wjmixer.tensor import Rng


def run(args):
    graph = load_topology(args.graph) if args.graph else human36m_topology()
    ops = build_operators(graph)
    signal = Rng(args.seed).normal(0.0, 1.0, (graph.n_joints, args.channels))
    alpha = 1.0 / (1.0 + args.s)
    bound = 2.0 / (2.0 - alpha)
    print(f"n={graph.n_joints}  s={args.s}  alpha={alpha:.4f}  "
          f"omega bound={bound:.4f}")
    print(f"{'omega':>8} {'rho(M)':>8} {'measured':>9} {'iters':>6}")
    for k in range(args.steps):
        omega = (k + 1) * (bound + args.overshoot) / args.steps
        problem = FairingProblem(ops.laplacian, signal, s=args.s, omega=omega)
        rho = iteration_spectral_radius(problem)
        try:
            rate = observed_decay_rate(problem, seed=args.seed)
            iters = solve_jacobi(problem, tol=args.tol).iterations
            print(f"{omega:8.4f} {rho:8.4f} {rate:9.4f} {iters:6d}")
        except (ConvergenceError, ValueError) as exc:
            print(f"{omega:8.4f} {rho:8.4f} {'-':>9} {'-':>6}  {exc}")
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--graph", help="topology JSON (default: 16-joint skeleton)")
    ap.add_argument("--s", type=float, default=9.0)
    ap.add_argument("--channels", type=int, default=4)
    ap.add_argument("--steps", type=int, default=12)
    ap.add_argument("--overshoot", type=float, default=0.2,
                    help="sweep this far past the convergence bound")
    ap.add_argument("--tol", type=float, default=1e-8)
    ap.add_argument("--seed", type=int, default=0)
    sys.exit(run(ap.parse_args()))
