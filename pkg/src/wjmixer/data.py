"""Dataset formats and the seeded synthetic 2D-to-3D generator.

A sample is a T-frame 2D joint sequence plus the root-relative 3D pose of
the center frame in millimeters. Synthetic motion comes from a Gaussian
random walk on per-bone spherical angles pushed through forward kinematics
(bone lengths exact by construction), viewed by an orthographically
projecting camera with a random yaw/pitch. Targets live in the camera frame
so the lifting task is well posed. Files are newline-delimited JSON, one
sample per line, floats serialized at full precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import SkeletonGraph
from .tensor import Rng, ShapeError

DEFAULT_BONE_LENGTH_MM = 280.0
_CANONICAL_POSE_SEED = 0xC0FFEE


@dataclass
class PoseSample:
    """One training example: seq2d is (T, N, 2); target3d is (N, 3) mm,
    root-relative, for the center frame."""

    id: str
    seq2d: np.ndarray
    target3d: np.ndarray

    def __post_init__(self):
        self.seq2d = np.asarray(self.seq2d, dtype=np.float64)
        self.target3d = np.asarray(self.target3d, dtype=np.float64)
        if self.seq2d.ndim != 3 or self.seq2d.shape[2] != 2:
            raise ShapeError(f"seq2d must be (T, N, 2), got {self.seq2d.shape}")
        if self.seq2d.shape[0] % 2 == 0:
            raise ValueError(f"frame count must be odd, got {self.seq2d.shape[0]}")
        if self.target3d.ndim != 2 or self.target3d.shape[1] != 3:
            raise ShapeError(f"target3d must be (N, 3), got {self.target3d.shape}")
        if self.target3d.shape[0] != self.seq2d.shape[1]:
            raise ShapeError("seq2d and target3d disagree on the joint count")

    @property
    def frames(self) -> int:
        return self.seq2d.shape[0]

    @property
    def n_joints(self) -> int:
        return self.seq2d.shape[1]


@dataclass
class SyntheticConfig:
    n_samples: int = 100
    frames: int = 9
    bone_lengths: tuple = None  # per edge, mm; None = uniform default
    angle_step_sigma: float = 0.03
    noise2d_sigma: float = 0.01  # relative to the center frame's max radius
    seed: int = 0
    angle_init_sigma: float = 0.35
    camera_yaw_range: float = math.pi / 4
    camera_pitch_range: float = math.pi / 12

    def validate(self, graph: SkeletonGraph = None):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.frames < 1 or self.frames % 2 == 0:
            raise ValueError(f"frames must be odd and >= 1, got {self.frames}")
        if self.angle_step_sigma < 0 or self.noise2d_sigma < 0 or self.angle_init_sigma < 0:
            raise ValueError("sigmas must be >= 0")
        if self.bone_lengths is not None:
            for length in self.bone_lengths:
                if not 50.0 <= length <= 600.0:
                    raise ValueError(f"bone length {length} outside [50, 600] mm")
            if graph is not None and len(self.bone_lengths) != graph.n_edges:
                raise ValueError(
                    f"{len(self.bone_lengths)} bone lengths for {graph.n_edges} edges")
        return self

    def to_dict(self) -> dict:
        return {"n_samples": self.n_samples, "T": self.frames,
                "bone_lengths": None if self.bone_lengths is None else list(self.bone_lengths),
                "angle_step_sigma": self.angle_step_sigma,
                "noise2d_sigma": self.noise2d_sigma, "seed": self.seed,
                "angle_init_sigma": self.angle_init_sigma,
                "camera_yaw_range": self.camera_yaw_range,
                "camera_pitch_range": self.camera_pitch_range}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        if "T" in d:
            d["frames"] = d.pop("T")
        if d.get("bone_lengths") is not None:
            d["bone_lengths"] = tuple(d["bone_lengths"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic config fields: {sorted(unknown)}")
        return cls(**d).validate()


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

def tree_order(graph: SkeletonGraph):
    """Edges oriented away from the root: list of (parent, child, edge_index)."""
    if not graph.is_tree():
        raise ValueError(
            f"graph with {graph.n_edges} edges over {graph.n_joints} joints is not a tree")
    index = {}
    for e, (i, j) in enumerate(graph.edges):
        index[(i, j)] = e
        index[(j, i)] = e
    adj = [[] for _ in range(graph.n_joints)]
    for i, j in graph.edges:
        adj[i].append(j)
        adj[j].append(i)
    order = []
    seen = {graph.root_index}
    queue = [graph.root_index]
    while queue:
        parent = queue.pop(0)
        for child in sorted(adj[parent]):
            if child not in seen:
                seen.add(child)
                order.append((parent, child, index[(parent, child)]))
                queue.append(child)
    return order


def _direction(theta: float, phi: float) -> np.ndarray:
    # theta: polar angle from the vertical (y) axis; phi: azimuth in the x-z plane.
    st = math.sin(theta)
    return np.array([st * math.cos(phi), math.cos(theta), st * math.sin(phi)])


def forward_kinematics(graph: SkeletonGraph, lengths: np.ndarray,
                       angles: np.ndarray) -> np.ndarray:
    """Joint positions from per-edge (theta, phi) angles; root at the origin."""
    pos = np.zeros((graph.n_joints, 3))
    for parent, child, e in tree_order(graph):
        pos[child] = pos[parent] + lengths[e] * _direction(angles[e, 0], angles[e, 1])
    return pos


def canonical_angles(graph: SkeletonGraph) -> np.ndarray:
    """Fixed base pose for a topology: seeded random bone directions.

    A generic pose has no mirror symmetry about the image plane, which keeps
    depth identifiable under the camera model below.
    """
    rng = Rng(_CANONICAL_POSE_SEED)
    angles = np.empty((graph.n_edges, 2))
    angles[:, 0] = rng.uniform(0.25 * math.pi, 0.75 * math.pi, graph.n_edges)
    angles[:, 1] = rng.uniform(-math.pi, math.pi, graph.n_edges)
    return angles


def _camera_rotation(yaw: float, pitch: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    rot_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rot_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return rot_pitch @ rot_yaw


def generate_synthetic(config: SyntheticConfig, graph: SkeletonGraph):
    """Deterministic synthetic dataset; sample i uses the stream seeded by
    (config.seed XOR i), so generation order never matters."""
    config.validate(graph)
    if not graph.is_tree():
        raise ValueError("synthetic generation needs a tree skeleton")
    if config.bone_lengths is not None:
        lengths = np.asarray(config.bone_lengths, dtype=np.float64)
    else:
        lengths = np.full(graph.n_edges, DEFAULT_BONE_LENGTH_MM)
    base = canonical_angles(graph)
    t = config.frames
    center = t // 2
    samples = []
    for i in range(config.n_samples):
        rng = Rng(config.seed ^ i)
        angles = base + rng.normal(0.0, config.angle_init_sigma, base.shape)
        poses = np.empty((t, graph.n_joints, 3))
        for f in range(t):
            if f > 0:
                angles = angles + rng.normal(0.0, config.angle_step_sigma, base.shape)
            poses[f] = forward_kinematics(graph, lengths, angles)
        yaw = rng.uniform(-config.camera_yaw_range, config.camera_yaw_range, None)
        pitch = rng.uniform(-config.camera_pitch_range, config.camera_pitch_range, None)
        rot = _camera_rotation(float(yaw), float(pitch))
        cam = poses @ rot.T
        target = cam[center] - cam[center, graph.root_index]
        seq2d = cam[:, :, :2].copy()
        if config.noise2d_sigma > 0:
            centered = seq2d[center] - seq2d[center, graph.root_index]
            radius = float(np.max(np.linalg.norm(centered, axis=1)))
            seq2d = seq2d + rng.normal(0.0, config.noise2d_sigma * radius, seq2d.shape)
        samples.append(PoseSample(id=f"synth-{i:06d}", seq2d=seq2d, target3d=target))
    return samples


# ---------------------------------------------------------------------------
# windowing, normalization, batching
# ---------------------------------------------------------------------------

def window_sequence(frames: np.ndarray, t: int, center_index: int) -> np.ndarray:
    """T frames centered at center_index; out-of-range indices replicate the
    nearest edge frame."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ValueError(f"expected a non-empty (M, N, 2) frame stack, got {frames.shape}")
    if t < 1 or t % 2 == 0:
        raise ValueError(f"window length must be odd and >= 1, got {t}")
    if not 0 <= center_index < frames.shape[0]:
        raise ValueError(f"center {center_index} outside 0..{frames.shape[0] - 1}")
    half = t // 2
    idx = np.clip(np.arange(center_index - half, center_index + half + 1),
                  0, frames.shape[0] - 1)
    return frames[idx]


def normalize_2d(seq2d: np.ndarray, root_index: int = 0) -> np.ndarray:
    """Root-center on the center frame, then scale so the center frame's
    farthest joint sits at radius 1. Translation- and scale-invariant."""
    seq2d = np.asarray(seq2d, dtype=np.float64)
    center = seq2d.shape[0] // 2
    shifted = seq2d - seq2d[center, root_index]
    radius = float(np.max(np.linalg.norm(shifted[center], axis=1)))
    if radius == 0.0:
        raise ValueError("cannot normalize: all center-frame joints coincide with the root")
    return shifted / radius


def flatten_sequence(seq2d: np.ndarray) -> np.ndarray:
    """(T, N, 2) -> (N, 2T), concatenating each frame's (x, y) in frame order."""
    t, n, _ = seq2d.shape
    return seq2d.transpose(1, 0, 2).reshape(n, 2 * t)


def samples_to_arrays(samples, frames: int, n_joints: int, root_index: int):
    """Normalized, flattened inputs (B, N, 2T) and targets (B, N, 3)."""
    inputs = np.empty((len(samples), n_joints, 2 * frames))
    targets = np.empty((len(samples), n_joints, 3))
    for k, sample in enumerate(samples):
        if sample.frames != frames or sample.n_joints != n_joints:
            raise ShapeError(
                f"sample {sample.id}: shape (T={sample.frames}, N={sample.n_joints}) "
                f"does not match model (T={frames}, N={n_joints})")
        inputs[k] = flatten_sequence(normalize_2d(sample.seq2d, root_index))
        targets[k] = sample.target3d
    return inputs, targets


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def save_dataset(samples, path):
    with open(path, "w") as fh:
        for sample in samples:
            fh.write(json.dumps({"id": sample.id,
                                 "seq2d": sample.seq2d.tolist(),
                                 "target3d": sample.target3d.tolist()}) + "\n")


def load_dataset(path):
    samples = []
    frames = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            for key in ("id", "seq2d", "target3d"):
                if key not in doc:
                    raise ValueError(f"{path}:{lineno}: record missing field '{key}'")
            try:
                sample = PoseSample(id=doc["id"], seq2d=doc["seq2d"],
                                    target3d=doc["target3d"])
            except (ValueError, ShapeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if frames is None:
                frames = sample.frames
            elif sample.frames != frames:
                raise ValueError(
                    f"{path}:{lineno}: frame count {sample.frames} differs from "
                    f"earlier records ({frames})")
            samples.append(sample)
    if not samples:
        raise ValueError(f"{path}: dataset file is empty")
    return samples
