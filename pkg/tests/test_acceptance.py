"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; criterion 5 trains a small model for 60 epochs and dominates the
runtime of the whole suite.
"""

import json
import math
import time

import numpy as np
import pytest

from wjmixer.audit import run_audit_suite, suite_worst
from wjmixer.cli import main as cli_main
from wjmixer.data import SyntheticConfig, generate_synthetic
from wjmixer.fairing import (
    ConvergenceError, FairingProblem, iteration_spectral_radius,
    observed_decay_rate, solve_direct, solve_jacobi,
)
from wjmixer.graph import SkeletonGraph, build_operators, human36m_topology
from wjmixer.metrics import auc, mpjpe, pa_mpjpe
from wjmixer.model import MixerModel, ModelConfig, count_params
from wjmixer.tensor import Rng
from wjmixer.train import TrainConfig, pose_loss, split_indices, train
from conftest import make_random_connected_graph


def report(number, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number} ({name}): {status}  {detail}")
    assert ok, f"criterion {number} ({name}) failed: {detail}"


def test_criterion_1_solver_oracle_equivalence():
    rng = Rng(2024)
    t0 = time.time()
    worst = 0.0
    for k in range(20):
        n = int(rng.integers(4, 33))
        f = int(rng.integers(1, 9))
        s = (1.0, 9.0, 99.0)[k % 3]
        graph = make_random_connected_graph(n, rng)
        ops = build_operators(graph)
        problem = FairingProblem(ops.laplacian, rng.normal(0, 1, (n, f)), s=s)
        jac = solve_jacobi(problem, tol=1e-10).solution
        direct = solve_direct(problem)
        worst = max(worst, np.linalg.norm(jac - direct) / np.linalg.norm(direct))
    elapsed = time.time() - t0
    report(1, "solver-oracle equivalence", worst < 1e-8 and elapsed < 5.0,
           f"worst rel gap {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_convergence_theory():
    rng = Rng(4099)
    misses = 0
    worst_dev = 0.0
    for k in range(50):
        n = int(rng.integers(4, 25))
        graph = make_random_connected_graph(n, rng)
        ops = build_operators(graph)
        s = (1.0, 9.0, 99.0)[k % 3]
        alpha = 1.0 / (1.0 + s)
        bound = 2.0 / (2.0 - alpha)
        omega = rng.uniform(0.15, bound - 0.03)
        problem = FairingProblem(ops.laplacian, rng.normal(0, 1, (n, 3)),
                                 s=s, omega=omega)
        rho = iteration_spectral_radius(problem)
        assert rho < 1.0
        rate = observed_decay_rate(problem, seed=k)
        dev = abs(rate - rho) / rho
        worst_dev = max(worst_dev, dev)
        if dev > 0.10:
            misses += 1

    # a star graph is bipartite: its normalized adjacency has eigenvalue -1,
    # so omega beyond the bound must push the spectral radius to >= 1
    star = SkeletonGraph(6, ((0, 1), (0, 2), (0, 3), (0, 4), (0, 5)))
    ops = build_operators(star)
    alpha = 0.1
    bad_omega = 2.0 / (2.0 - alpha) + 0.1
    problem = FairingProblem(ops.laplacian, Rng(11).normal(0, 1, (6, 2)),
                             s=9.0, omega=bad_omega)
    rho_bad = iteration_spectral_radius(problem)
    print(f"  divergence diagnostic: omega={bad_omega:.4f}, rho={rho_bad:.4f}")
    diverged = False
    try:
        solve_jacobi(problem, tol=1e-8)
    except ConvergenceError:
        diverged = True
    report(2, "convergence theory",
           misses == 0 and rho_bad >= 1.0 and diverged,
           f"rate-vs-rho worst dev {worst_dev:.3f}, "
           f"diverging rho {rho_bad:.3f}, divergence detected {diverged}")


def test_criterion_3_gradient_audit():
    t0 = time.time()
    worst = 0.0
    for seed in range(5):
        worst = max(worst, suite_worst(run_audit_suite(seed)))
    elapsed = time.time() - t0
    report(3, "gradient audit", worst <= 1e-4 and elapsed < 60.0,
           f"worst rel err {worst:.2e} over 5 seeds, {elapsed:.1f}s")


def test_criterion_4_architecture_shape_conformance():
    graph = human36m_topology()
    cfg = ModelConfig(n_joints=16, frames=243, layers=3, embed_dim=384,
                      hidden_dim=768)
    model = MixerModel(cfg, graph)
    rng = Rng(5)
    s = rng.normal(0, 1, (2, 16, 2 * 243))
    out = model.forward(s, training=False)
    shapes_ok = out.shape == (2, 16, 3)
    mix, _, block = model.mixer_layers[0]
    u = mix.forward(rng.normal(0, 1, (2, 16, 384)))
    mid = block.wj1.forward(u, rng.normal(0, 1, (2, 16, 384)))
    final = block.wj2.forward(np.tanh(mid), rng.normal(0, 1, (2, 16, 384)))
    shapes_ok = shapes_ok and u.shape == (2, 16, 384) \
        and mid.shape == (2, 16, 768) and final.shape == (2, 16, 384)

    totals = {}
    for t in (1, 9):
        totals[t] = count_params(
            MixerModel(ModelConfig(frames=t, embed_dim=384, hidden_dim=768,
                                   layers=3), graph))["total"]
    in_band = 4_300_000 <= totals[9] <= 6_500_000
    slope_ok = totals[9] - totals[1] == 2 * 8 * 384
    report(4, "architecture shape conformance",
           shapes_ok and in_band and slope_ok,
           f"T=9 params {totals[9]:,}, T-slope {totals[9] - totals[1]}")


def test_criterion_5_desk_scale_learning():
    graph = human36m_topology()
    samples = generate_synthetic(
        SyntheticConfig(n_samples=2000, frames=9, seed=42), graph)
    model = MixerModel(ModelConfig(n_joints=16, frames=9, layers=2,
                                   embed_dim=64, hidden_dim=128, seed=1), graph)
    train_cfg = TrainConfig(batch_size=32, epochs=60, lr0=0.01, seed=3)

    _, val_idx = split_indices(len(samples), train_cfg.seed, train_cfg.val_fraction)
    zero_baseline = float(np.mean([
        np.linalg.norm(samples[i].target3d, axis=1).mean() for i in val_idx]))

    t0 = time.time()
    log = train(model, samples, train_cfg)
    elapsed = time.time() - t0

    final_val = log[-1]["val_mpjpe"]
    first_losses = [r["train_loss"] for r in log[:6]]
    down = sum(b < a for a, b in zip(first_losses, first_losses[1:]))
    report(5, "desk-scale learning",
           elapsed < 900.0 and final_val < 0.5 * zero_baseline and down >= 4,
           f"val MPJPE {final_val:.1f}mm vs zero-predictor {zero_baseline:.1f}mm "
           f"(ratio {final_val / zero_baseline:.3f}), "
           f"{down}/5 early-loss drops, {elapsed:.0f}s")


def test_criterion_6_metric_correctness():
    rng = Rng(77)
    gt = rng.normal(0, 100, (16, 3))
    pred345 = gt + np.array([3.0, 0.0, 4.0])
    case_a = mpjpe(pred345, gt) == 5.0

    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    transformed = 2.0 * gt @ rot.T + np.array([12.0, -8.0, 5.0])
    case_b = pa_mpjpe(transformed, gt) <= 1e-9

    # Independent random pose pairs: the similarity fit improves the squared
    # residual by a wide margin, so the mean-of-norms ordering follows. (For
    # near-identity correlated pairs the least-squares-optimal transform can
    # raise the mean of norms by a hair; that gap is inherent to the
    # sum-of-squares objective, not to this implementation.)
    case_c = True
    for _ in range(1000):
        g = rng.normal(0, 100, (16, 3))
        p = rng.normal(0, 100, (16, 3))
        if pa_mpjpe(p, g) > mpjpe(p, g) + 1e-9:
            case_c = False
            break

    case_d = auc([75.0]) == 16.0 / 31.0
    report(6, "metric correctness", case_a and case_b and case_c and case_d,
           f"3-4-5 exact {case_a}, similarity recovery {case_b}, "
           f"PA<=MPJPE x1000 {case_c}, AUC(75mm)==16/31 {case_d}")


def test_criterion_7_end_to_end_determinism(tmp_path, capsys):
    model_flags = ["--layers", "1", "--embed-dim", "4", "--hidden-dim", "6",
                   "--frames", "3", "--joints", "16"]
    outputs = []
    for tag in ("run_a", "run_b"):
        work = tmp_path / tag
        work.mkdir()
        data = work / "data.ndjson"
        assert cli_main(["synth", "--out", str(data), "--samples", "60",
                         "--seed", "21", "--frames", "3"]) == 0
        capsys.readouterr()
        assert cli_main(["train", *model_flags, "--data", str(data),
                         "--out-dir", str(work), "--epochs", "3",
                         "--batch-size", "8", "--train-seed", "6",
                         "--model-seed", "2", "--lr0", "0.01"]) == 0
        capsys.readouterr()
        assert cli_main(["eval", "--checkpoint", str(work / "checkpoint_last.json"),
                         "--data", str(data)]) == 0
        outputs.append(capsys.readouterr().out.encode())
    report(7, "end-to-end determinism", outputs[0] == outputs[1],
           f"{len(outputs[0])} bytes of metric JSON, byte-identical "
           f"{outputs[0] == outputs[1]}")


def test_criterion_8_loss_contract():
    y = Rng(6).normal(0, 1, (5, 3))
    exact_zero = pose_loss(y, y, 0.37) == 0.0

    unit = pose_loss(np.array([[1.0, 0.0, 0.0]]), np.zeros((1, 3)), 0.01) == 1.0
    two = pose_loss(np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]),
                    np.zeros((2, 3)), 0.5) == 2.0

    rng = Rng(7)
    pred, target = rng.normal(0, 1, (9, 3)), rng.normal(0, 1, (9, 3))
    mse_loop = sum((target[i, k] - pred[i, k]) ** 2
                   for i in range(9) for k in range(3)) / 9
    mae_loop = sum(abs(target[i, k] - pred[i, k])
                   for i in range(9) for k in range(3)) / 9
    reduces = (math.isclose(pose_loss(pred, target, 0.0), mse_loop, rel_tol=1e-13)
               and math.isclose(pose_loss(pred, target, 1.0), mae_loop, rel_tol=1e-13))
    report(8, "loss contract", exact_zero and unit and two and reduces,
           f"examples exact {exact_zero and unit and two}, "
           f"lambda-limit forms match loops {reduces}")
