"""Command-line interface.

Subcommands: synth, train, eval, filter, gradcheck, params. Machine-readable
JSON goes to stdout (eval, params, filter, gradcheck reports); human logs and
the echoed fully-resolved configs go to stderr. Config precedence is
flags > config file > defaults.

Exit codes: 0 success, 1 usage or validation error, 2 numerical failure
(NaN loss or solver divergence), 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import audit as audit_mod
from .data import SyntheticConfig, generate_synthetic, load_dataset, save_dataset, \
    samples_to_arrays
from .fairing import ConvergenceError, FairingProblem, iteration_spectral_radius, \
    solve_direct, solve_jacobi
from .graph import build_operators, human36m_topology, load_topology
from .metrics import evaluate_poses
from .model import MixerModel, ModelConfig, count_params, load_checkpoint
from .tensor import Rng
from .train import NumericalError, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(ValueError):
    pass


def _log(msg: str):
    print(msg, file=sys.stderr)


def _echo_config(name: str, config: dict):
    _log(f"resolved {name}: {json.dumps(config)}")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def _resolve_model_config(args) -> ModelConfig:
    doc = _load_json(args.model_config) if args.model_config else {}
    overrides = {
        "layers": args.layers, "embed_dim": args.embed_dim,
        "hidden_dim": args.hidden_dim, "frames": args.frames,
        "n_joints": args.joints, "alpha": args.alpha, "lambda": args.lam,
        "dropout_p": args.dropout, "seed": args.model_seed,
    }
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    return ModelConfig.from_dict(doc)


def _resolve_graph(path):
    return load_topology(path) if path else human36m_topology()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    if args.samples is not None:
        doc["n_samples"] = args.samples
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.frames is not None:
        doc["T"] = args.frames
    config = SyntheticConfig.from_dict(doc)
    graph = _resolve_graph(args.graph)
    config.validate(graph)
    _echo_config("synth config", config.to_dict())
    samples = generate_synthetic(config, graph)
    save_dataset(samples, args.out)
    _log(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    model_config = _resolve_model_config(args)
    train_doc = _load_json(args.train_config) if args.train_config else {}
    for key, value in (("batch_size", args.batch_size), ("epochs", args.epochs),
                       ("lr0", args.lr0), ("seed", args.train_seed),
                       ("lambda", args.lam)):
        if value is not None:
            train_doc[key] = value
    train_config = TrainConfig.from_dict(train_doc)
    _echo_config("model config", model_config.to_dict())
    _echo_config("train config", train_config.to_dict())

    samples = load_dataset(args.data)
    graph = _resolve_graph(args.graph)
    os.makedirs(args.out_dir, exist_ok=True)

    resume_state = None
    start_epoch = 0
    if args.resume:
        model, resume_state = load_checkpoint(args.resume)
        if resume_state is None:
            raise UsageError(f"{args.resume} carries no optimizer state; cannot resume")
        start_epoch = int(resume_state.get("next_epoch", 0))
        _log(f"resuming from {args.resume} at epoch {start_epoch}")
    else:
        model = MixerModel(model_config, graph)

    log_path = os.path.join(args.out_dir, "train_log.jsonl")
    mode = "a" if args.resume else "w"
    with open(log_path, mode) as log_fh:
        log = train(model, samples, train_config, out_dir=args.out_dir,
                    resume_optimizer_state=resume_state, start_epoch=start_epoch,
                    log_fh=log_fh)
    for record in log:
        _log(f"epoch {record['epoch']}: lr={record['lr']:.3e} "
             f"train_loss={record['train_loss']:.6g} val_mpjpe={record['val_mpjpe']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data)
    if samples[0].n_joints != model.config.n_joints:
        raise UsageError(
            f"dataset has {samples[0].n_joints} joints, checkpoint expects "
            f"{model.config.n_joints}")
    if samples[0].frames != model.config.frames:
        raise UsageError(
            f"dataset has {samples[0].frames} frames, checkpoint expects "
            f"{model.config.frames}")
    _echo_config("model config", model.config.to_dict())
    inputs, targets = samples_to_arrays(samples, model.config.frames,
                                        model.config.n_joints, model.graph.root_index)
    preds = []
    for lo in range(0, inputs.shape[0], 256):
        preds.append(model.forward(inputs[lo:lo + 256], training=False))
    report = evaluate_poses(np.concatenate(preds), targets, model.graph.root_index)
    print(report.to_json())
    return EXIT_OK


def cmd_filter(args) -> int:
    if args.omega <= 0:
        raise UsageError(f"omega must be positive, got {args.omega}")
    graph = _resolve_graph(args.graph)
    ops = build_operators(graph)
    if args.signal:
        signal = np.asarray(_load_json(args.signal), dtype=np.float64)
        if signal.ndim == 1:
            signal = signal[:, None]
    else:
        signal = Rng(args.seed).normal(0.0, 1.0, (graph.n_joints, args.channels))
    problem = FairingProblem(laplacian=ops.laplacian, signal=signal, s=args.s,
                             omega=args.omega)
    _echo_config("filter config", {"n": problem.n, "s": problem.s,
                                   "alpha": problem.alpha, "omega": problem.omega,
                                   "tol": args.tol})
    if not problem.in_convergence_range:
        _log(f"warning: omega={problem.omega} outside the guaranteed range "
             f"(0, {problem.omega_upper_bound:.6f}); proceeding anyway")
    rho = iteration_spectral_radius(problem) if problem.n <= 512 else None
    if rho is not None:
        _log(f"iteration spectral radius: {rho:.6f}"
             + (" (>= 1: expect divergence)" if rho >= 1.0 else ""))
    report = solve_jacobi(problem, tol=args.tol)
    direct = solve_direct(problem)
    gap = float(np.linalg.norm(report.solution - direct) / max(np.linalg.norm(direct), 1e-300))
    print(json.dumps({
        "iterations": report.iterations,
        "final_residual": report.final_residual,
        "jacobi_vs_direct_gap": gap,
        "spectral_radius": rho,
    }))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    suite = audit_mod.run_audit_suite(args.seed)
    worst = audit_mod.suite_worst(suite)
    print(json.dumps({"threshold": audit_mod.AUDIT_THRESHOLD, "worst": worst,
                      "reports": suite}))
    for block, report in suite.items():
        block_worst = max(report.values())
        status = "ok" if block_worst <= audit_mod.AUDIT_THRESHOLD else "FAIL"
        _log(f"gradcheck {block}: max rel err {block_worst:.3e} [{status}]")
    if worst > audit_mod.AUDIT_THRESHOLD:
        _log(f"gradcheck failed: worst {worst:.3e} > {audit_mod.AUDIT_THRESHOLD}")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_params(args) -> int:
    config = _resolve_model_config(args)
    _echo_config("model config", config.to_dict())
    graph = _resolve_graph(args.graph)
    model = MixerModel(config, graph)
    report = count_params(model)
    print(json.dumps(report))
    for name, size in report["per_tensor"].items():
        _log(f"{name:32s} {size:>10d}")
    _log(f"{'total':32s} {report['total']:>10d}  (formula: {report['formula_total']})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--model-config", help="JSON file with model hyperparameters")
    p.add_argument("--layers", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--joints", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--model-seed", type=int)
    p.add_argument("--graph", help="topology JSON file (default: 16-joint skeleton)")


def build_parser() -> _Parser:
    parser = _Parser(prog="wjmixer", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="SyntheticConfig JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--graph")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_model_flags(p)
    p.add_argument("--train-config", help="TrainConfig JSON file")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--train-seed", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; metrics JSON on stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("filter", help="run the fairing solver against the dense oracle")
    p.add_argument("--graph")
    p.add_argument("--signal", help="JSON matrix of node signals")
    p.add_argument("--s", type=float, default=9.0)
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=4)
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter accounting; JSON on stdout")
    _add_model_flags(p)
    p.set_defaults(fn=cmd_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except (ConvergenceError, NumericalError) as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return EXIT_IO


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
