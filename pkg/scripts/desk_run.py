#!/usr/bin/env python3
"""End-to-end desk-scale experiment: synthesize data, train, evaluate.

Runs the whole pipeline through the CLI entry points so the run is exactly
reproducible from the shell, then prints the metric report and the
zero-predictor baseline for context. ~2 minutes on one core with the
default settings.
"""

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from wjmixer.cli import main as cli
from wjmixer.data import load_dataset
from wjmixer.train import TrainConfig, split_indices


def run(args):
    work = args.work_dir or tempfile.mkdtemp(prefix="wjmixer-desk-")
    os.makedirs(work, exist_ok=True)
    data = os.path.join(work, "synth.ndjson")
    print(f"working directory: {work}", file=sys.stderr)

    rc = cli(["synth", "--out", data, "--samples", str(args.samples),
              "--frames", str(args.frames), "--seed", str(args.data_seed)])
    if rc != 0:
        return rc

    rc = cli(["train",
              "--layers", str(args.layers),
              "--embed-dim", str(args.embed_dim),
              "--hidden-dim", str(args.hidden_dim),
              "--frames", str(args.frames),
              "--data", data, "--out-dir", work,
              "--epochs", str(args.epochs), "--batch-size", str(args.batch_size),
              "--lr0", str(args.lr0), "--train-seed", str(args.train_seed),
              "--model-seed", str(args.model_seed)])
    if rc != 0:
        return rc

    rc = cli(["eval", "--checkpoint", os.path.join(work, "checkpoint_best.json"),
              "--data", data])
    if rc != 0:
        return rc

    # context: the all-joints-at-root baseline on the same validation split
    samples = load_dataset(data)
    cfg = TrainConfig(seed=args.train_seed)
    _, val_idx = split_indices(len(samples), cfg.seed, cfg.val_fraction)
    baseline = float(np.mean([np.linalg.norm(samples[i].target3d, axis=1).mean()
                              for i in val_idx]))
    log_path = os.path.join(work, "train_log.jsonl")
    last = json.loads(open(log_path).read().splitlines()[-1])
    print(f"zero-predictor baseline on val split: {baseline:.1f} mm", file=sys.stderr)
    print(f"final val MPJPE: {last['val_mpjpe']:.1f} mm "
          f"({last['val_mpjpe'] / baseline:.3f} of baseline)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", default=None)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--frames", type=int, default=9)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--embed-dim", type=int, default=64)
    ap.add_argument("--hidden-dim", type=int, default=128)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--lr0", type=float, default=0.01)
    ap.add_argument("--data-seed", type=int, default=42)
    ap.add_argument("--train-seed", type=int, default=3)
    ap.add_argument("--model-seed", type=int, default=1)
    sys.exit(run(ap.parse_args()))
