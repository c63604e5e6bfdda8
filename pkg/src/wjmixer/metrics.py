"""Pose evaluation metrics: MPJPE, Procrustes-aligned MPJPE, PCK, AUC.

All distances are millimeters. Poses are root-relative before any metric is
computed; the root joint stays in the average (its error is zero on both
sides, so it deflates nothing). PCK uses a closed threshold (error <= t) and
AUC is the plain mean of PCK over the 31-point grid 0, 5, ..., 150 mm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError

AUC_THRESHOLDS_MM = np.arange(0.0, 151.0, 5.0)  # 31 points
PCK_DEFAULT_THRESHOLD_MM = 150.0
HARD_POSE_FRACTION = 0.05
HARD_POSE_MIN_SAMPLES = 20


def _check_pose_pair(pred: np.ndarray, gt: np.ndarray):
    if pred.shape != gt.shape:
        raise ShapeError(f"pose shape mismatch {pred.shape} vs {gt.shape}")
    if pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeError(f"expected (N, 3) poses, got {pred.shape}")


def per_joint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    _check_pose_pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=1)


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean over joints of the Euclidean error between root-relative poses."""
    return float(np.mean(per_joint_errors(pred, gt)))


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Best similarity transform (scale > 0, proper rotation, translation)
    of pred onto gt in the least-squares sense; returns the aligned pred."""
    _check_pose_pair(pred, gt)
    n = pred.shape[0]
    if n < 3:
        raise ValueError(f"Procrustes alignment needs >= 3 joints, got {n}")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    pc = pred - mu_p
    gc = gt - mu_g
    var_p = float(np.sum(pc * pc)) / n
    if not np.any(np.abs(gc) > 0):
        raise ValueError("degenerate ground truth: all joints coincident")
    if var_p == 0.0:
        raise ValueError("degenerate prediction: all joints coincident")
    cov = gc.T @ pc / n
    u, d, vt = np.linalg.svd(cov)
    corr = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        corr[-1] = -1.0  # force det(R) = +1: no reflections
    rot = u @ np.diag(corr) @ vt
    scale = float(np.sum(d * corr)) / var_p
    trans = mu_g - scale * (rot @ mu_p)
    return scale * (pred @ rot.T) + trans


def pa_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    return mpjpe(procrustes_align(pred, gt), gt)


def pck(errors_mm, threshold_mm: float = PCK_DEFAULT_THRESHOLD_MM) -> float:
    """Fraction of joints with error <= threshold."""
    if threshold_mm < 0:
        raise ValueError("threshold must be >= 0")
    errors = np.asarray(errors_mm, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("no errors given")
    return float(np.mean(errors <= threshold_mm))


def auc(errors_mm) -> float:
    """Mean of PCK over the documented 0..150 mm grid in 5 mm steps."""
    return float(np.mean([pck(errors_mm, t) for t in AUC_THRESHOLDS_MM]))


def hard_pose_mean(per_sample_mpjpe) -> float:
    """Mean error over the worst ceil(5%) of samples."""
    errs = np.asarray(per_sample_mpjpe, dtype=np.float64)
    if errs.size < HARD_POSE_MIN_SAMPLES:
        raise ValueError(
            f"hard-pose report needs >= {HARD_POSE_MIN_SAMPLES} samples, got {errs.size}")
    k = int(np.ceil(HARD_POSE_FRACTION * errs.size))
    worst = np.sort(errs)[::-1][:k]
    return float(np.mean(worst))


@dataclass
class MetricsReport:
    mpjpe_mm: float
    pa_mpjpe_mm: float
    pck_150: float
    auc: float
    hard5_mpjpe_mm: float  # None when fewer than 20 samples
    per_sample_errors: list = field(default_factory=list)
    pck_curve: list = field(default_factory=list)  # PCK at each AUC grid point

    def to_dict(self) -> dict:
        return {"mpjpe_mm": self.mpjpe_mm, "pa_mpjpe_mm": self.pa_mpjpe_mm,
                "pck_150": self.pck_150, "auc": self.auc,
                "hard5_mpjpe_mm": self.hard5_mpjpe_mm,
                "per_sample_errors": self.per_sample_errors,
                "pck_curve": self.pck_curve}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def evaluate_poses(preds: np.ndarray, gts: np.ndarray, root_index: int = 0) -> MetricsReport:
    """Metrics over a (B, N, 3) batch of predictions and targets.

    Both sides are re-expressed root-relative. PCK and AUC pool the raw
    (unaligned) per-joint errors across all samples.
    """
    if preds.shape != gts.shape:
        raise ShapeError(f"batch shape mismatch {preds.shape} vs {gts.shape}")
    sample_mpjpe = []
    sample_pa = []
    joint_errors = []
    for pred, gt in zip(preds, gts):
        pred = pred - pred[root_index]
        gt = gt - gt[root_index]
        errs = per_joint_errors(pred, gt)
        joint_errors.append(errs)
        sample_mpjpe.append(float(np.mean(errs)))
        sample_pa.append(pa_mpjpe(pred, gt))
    pooled = np.concatenate(joint_errors)
    hard5 = hard_pose_mean(sample_mpjpe) if len(sample_mpjpe) >= HARD_POSE_MIN_SAMPLES else None
    curve = [pck(pooled, t) for t in AUC_THRESHOLDS_MM]
    return MetricsReport(
        mpjpe_mm=float(np.mean(sample_mpjpe)),
        pa_mpjpe_mm=float(np.mean(sample_pa)),
        pck_150=pck(pooled),
        auc=float(np.mean(curve)),
        hard5_mpjpe_mm=hard5,
        per_sample_errors=[float(e) for e in sample_mpjpe],
        pck_curve=curve,
    )
