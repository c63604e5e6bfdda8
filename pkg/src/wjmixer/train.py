"""Loss, AMSGrad optimization, learning-rate schedule, and the training loop.

The loss is a convex combination of squared-Euclidean and L1 residuals,
averaged over joints. AMSGrad keeps the running max of the second moment and
applies Adam-style bias correction. The schedule compounds a per-epoch decay
with an extra halving every five epochs. All shuffling and dropout streams
derive from (seed, epoch), so a run resumed from an epoch checkpoint replays
exactly the epochs an uninterrupted run would have produced.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .data import samples_to_arrays
from .metrics import mpjpe
from .model import MixerModel
from .tensor import ShapeError, derived_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NumericalError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 50
    lr0: float = 1e-3
    per_epoch_decay: float = 0.95
    five_epoch_decay: float = 0.5
    lam: float = 0.01
    seed: int = 0
    val_fraction: float = 0.1

    def validate(self):
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        for name in ("per_epoch_decay", "five_epoch_decay"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs it)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        return self

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size, "epochs": self.epochs,
                "lr0": self.lr0, "per_epoch_decay": self.per_epoch_decay,
                "five_epoch_decay": self.five_epoch_decay, "lambda": self.lam,
                "seed": self.seed, "val_fraction": self.val_fraction}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d).validate()


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def pose_loss(pred: np.ndarray, target: np.ndarray, lam: float) -> float:
    """(1/N) * [(1-lambda) * sum_i ||y_i - yhat_i||_2^2 + lambda * sum_i ||y_i - yhat_i||_1]."""
    if pred.shape != target.shape:
        raise ShapeError(f"pose_loss: shape mismatch {pred.shape} vs {target.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    resid = target - pred
    sq = float(np.sum(resid * resid))
    l1 = float(np.sum(np.abs(resid)))
    n = pred.shape[0]
    return ((1.0 - lam) * sq + lam * l1) / n


def pose_loss_grad(pred: np.ndarray, target: np.ndarray, lam: float) -> np.ndarray:
    """Gradient w.r.t. pred; the L1 subgradient at exact zeros is 0."""
    if pred.shape != target.shape:
        raise ShapeError(f"pose_loss_grad: shape mismatch {pred.shape} vs {target.shape}")
    resid = pred - target
    n = pred.shape[0]
    return ((1.0 - lam) * 2.0 * resid + lam * np.sign(resid)) / n


def batch_pose_loss(pred: np.ndarray, target: np.ndarray, lam: float):
    """Mean per-sample loss over a (B, N, 3) batch, plus its gradient."""
    if pred.shape != target.shape:
        raise ShapeError(f"batch_pose_loss: shape mismatch {pred.shape} vs {target.shape}")
    b, n, _ = pred.shape
    resid = pred - target
    sq = np.sum(resid * resid)
    l1 = np.sum(np.abs(resid))
    loss = ((1.0 - lam) * sq + lam * l1) / (n * b)
    grad = ((1.0 - lam) * 2.0 * resid + lam * np.sign(resid)) / (n * b)
    return float(loss), grad


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AmsGrad:
    """AMSGrad with Adam-style bias correction.

    v_hat is the entrywise running max of the second moment, so it never
    decreases; both moment estimates are bias-corrected before the update.
    """

    def __init__(self, params, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 eps: float = ADAM_EPS):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        for p in self.params:
            if p.m is None:
                p.m = np.zeros_like(p.value)
                p.v = np.zeros_like(p.value)
                p.vhat = np.zeros_like(p.value)

    def step(self, lr: float):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = p.grad
            p.m = b1 * p.m + (1.0 - b1) * g
            p.v = b2 * p.v + (1.0 - b2) * (g * g)
            np.maximum(p.vhat, p.v, out=p.vhat)
            m_hat = p.m / (1.0 - b1 ** t)
            v_hat_corr = p.vhat / (1.0 - b2 ** t)
            p.value -= lr * m_hat / (np.sqrt(v_hat_corr) + self.eps)

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "params": {p.name: {"m": p.m.reshape(-1).tolist(),
                                "v": p.v.reshape(-1).tolist(),
                                "vhat": p.vhat.reshape(-1).tolist()}
                       for p in self.params},
        }

    def load_state_dict(self, state: dict):
        self.step_count = int(state["step_count"])
        for p in self.params:
            entry = state["params"].get(p.name)
            if entry is None:
                raise ValueError(f"optimizer state missing parameter '{p.name}'")
            p.m = np.asarray(entry["m"], dtype=np.float64).reshape(p.value.shape)
            p.v = np.asarray(entry["v"], dtype=np.float64).reshape(p.value.shape)
            p.vhat = np.asarray(entry["vhat"], dtype=np.float64).reshape(p.value.shape)


def amsgrad_step(params, lr: float, optimizer: AmsGrad = None) -> AmsGrad:
    """One optimizer step over params using their .grad buffers."""
    opt = optimizer if optimizer is not None else AmsGrad(params)
    opt.step(lr)
    return opt


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """lr0 * per_epoch_decay^epoch * five_epoch_decay^floor(epoch/5)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr0 * config.per_epoch_decay ** epoch \
        * config.five_epoch_decay ** (epoch // 5)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def split_indices(n: int, seed: int, val_fraction: float):
    """Deterministic disjoint-and-exhaustive train/val split."""
    perm = derived_rng(seed, 0x5EED).permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    if n_val >= n:
        raise ValueError(f"dataset of {n} samples too small for validation split")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _param_norm_snapshot(model: MixerModel, top: int = 5) -> str:
    norms = sorted(((float(np.linalg.norm(p.value)), name)
                    for name, p in model.registry.items()), reverse=True)
    return ", ".join(f"{name}={norm:.3e}" for norm, name in norms[:top])


def validation_mpjpe(model: MixerModel, inputs: np.ndarray, targets: np.ndarray,
                     root_index: int, batch_size: int = 256) -> float:
    errs = []
    for lo in range(0, inputs.shape[0], batch_size):
        pred = model.forward(inputs[lo:lo + batch_size], training=False)
        for p, t in zip(pred, targets[lo:lo + batch_size]):
            errs.append(mpjpe(p - p[root_index], t - t[root_index]))
    return float(np.mean(errs))


def train(model: MixerModel, samples, config: TrainConfig, out_dir=None,
          resume_optimizer_state: dict = None, start_epoch: int = 0,
          log_fh=None):
    """Train in place; returns the per-epoch log as a list of dicts.

    Writes checkpoint_last.json every epoch and checkpoint_best.json whenever
    validation improves (when out_dir is given). Aborts with NumericalError
    on a non-finite loss rather than clipping or repairing.
    """
    config.validate()
    if not samples:
        raise ValueError("dataset is empty")
    root = model.graph.root_index
    inputs, targets = samples_to_arrays(samples, model.config.frames,
                                        model.config.n_joints, root)
    train_idx, val_idx = split_indices(len(samples), config.seed, config.val_fraction)
    train_x, train_y = inputs[train_idx], targets[train_idx]
    val_x, val_y = inputs[val_idx], targets[val_idx]

    optimizer = AmsGrad(model.parameters())
    if resume_optimizer_state is not None:
        optimizer.load_state_dict(resume_optimizer_state)

    log = []
    best_val = math.inf
    for epoch in range(start_epoch, config.epochs):
        lr = lr_at_epoch(config, epoch)
        rng = derived_rng(config.seed, 0xE9, epoch)
        order = rng.permutation(train_x.shape[0])
        losses = []
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            if idx.size < 2:
                continue  # batch norm needs at least two samples
            model.zero_grad()
            pred = model.forward(train_x[idx], training=True, rng=rng)
            loss, grad = batch_pose_loss(pred, train_y[idx], config.lam)
            if not math.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {b}; "
                    f"largest parameter norms: {_param_norm_snapshot(model)}")
            model.backward(grad)
            optimizer.step(lr)
            losses.append(loss)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_mpjpe": validation_mpjpe(model, val_x, val_y, root),
        }
        log.append(record)
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()
        if out_dir is not None:
            state = optimizer.state_dict()
            state["next_epoch"] = epoch + 1
            model.save_checkpoint(os.path.join(out_dir, "checkpoint_last.json"), state)
            if record["val_mpjpe"] < best_val:
                best_val = record["val_mpjpe"]
                model.save_checkpoint(os.path.join(out_dir, "checkpoint_best.json"), state)
    return log
