"""Full lifting model: skeleton embedding, stacked mixer layers, regression head.

Each mixer layer runs a joint-mixing MLP followed by a two-step weighted-
Jacobi channel-mixing block; the final layer adds the skip z = u + q before
the head. Layers chain through the block outputs, and the unfiltered
embedding x is re-injected into every propagation layer. The model owns an
ordered parameter registry so checkpoints are layout-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .graph import SkeletonGraph, build_operators, human36m_topology
from .layers import (
    JointMixingMlp, ModulatedAdjacency, Parameter, RegressionHead, WjBlock,
    _flat_matmul, glorot_uniform,
)
from .tensor import Rng, ShapeError

CHECKPOINT_FORMAT_VERSION = 1


def skeleton_embedding(s_tilde: np.ndarray, w4: np.ndarray) -> np.ndarray:
    """Embed flattened 2-D sequences: (.., N, 2T) @ (2T, F) -> (.., N, F)."""
    if s_tilde.shape[-1] != w4.shape[0]:
        raise ShapeError(
            f"sequence has {s_tilde.shape[-1]} columns, embedding expects {w4.shape[0]}")
    if s_tilde.ndim == 2:
        return s_tilde @ w4
    return _flat_matmul(s_tilde, w4)


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults follow the detected-pose setup."""

    n_joints: int = 16
    frames: int = 9
    layers: int = 3
    embed_dim: int = 384
    hidden_dim: int = 768
    alpha: float = 0.1
    lam: float = 0.01
    dropout_p: float = 0.2
    seed: int = 0

    def validate(self):
        if self.layers < 1 or self.embed_dim < 1 or self.hidden_dim < 1:
            raise ValueError("layers, embed_dim and hidden_dim must all be >= 1")
        if self.frames < 1 or self.frames % 2 == 0:
            raise ValueError(f"frames must be odd and >= 1, got {self.frames}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.n_joints < 2:
            raise ValueError("need at least 2 joints")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d.pop("topology", None)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d).validate()


class MixerModel:
    """The assembled network plus its ordered parameter registry."""

    def __init__(self, config: ModelConfig, graph: SkeletonGraph, rng: Rng = None):
        config.validate()
        if graph.n_joints != config.n_joints:
            raise ValueError(
                f"graph has {graph.n_joints} joints, config says {config.n_joints}")
        self.config = config
        self.graph = graph
        self.operators = build_operators(graph)
        rng = rng if rng is not None else Rng(config.seed)
        n, f, r = config.n_joints, config.embed_dim, config.hidden_dim
        t = config.frames

        self.w4 = Parameter("embed.w4", glorot_uniform(rng, 2 * t, f, (2 * t, f)))
        self.mixer_layers = []
        for i in range(config.layers):
            mix = JointMixingMlp(n, f, rng, f"layer{i}.mix")
            adj = ModulatedAdjacency.create(self.operators.norm_adj, rng,
                                            f"layer{i}.adj.q")
            block = WjBlock(n, f, r, adj, config.alpha, config.dropout_p, rng,
                            f"layer{i}.block")
            self.mixer_layers.append((mix, adj, block))
        self.head = RegressionHead(f, rng, "head")

        self.registry = {}
        for p in self._all_params():
            if p.name in self.registry:
                raise ValueError(f"duplicate parameter name {p.name}")
            self.registry[p.name] = p

    def _all_params(self):
        out = [self.w4]
        for mix, adj, block in self.mixer_layers:
            out += mix.params() + adj.params() + block.params()
        return out + self.head.params()

    def parameters(self):
        return list(self.registry.values())

    def batch_norms(self):
        out = []
        for _, _, block in self.mixer_layers:
            out += block.batch_norms()
        return out

    def zero_grad(self):
        for p in self.registry.values():
            p.zero_grad()

    # -- forward / backward -------------------------------------------------

    def forward(self, s_tilde: np.ndarray, training: bool = False,
                rng: Rng = None) -> np.ndarray:
        """Map flattened 2-D sequences (B, N, 2T) to 3-D poses (B, N, 3)."""
        cfg = self.config
        if s_tilde.ndim != 3:
            raise ShapeError(f"expected (B, N, 2T) input, got shape {s_tilde.shape}")
        if s_tilde.shape[1] != cfg.n_joints or s_tilde.shape[2] != 2 * cfg.frames:
            raise ShapeError(
                f"input shape {s_tilde.shape[1:]} does not match "
                f"(N={cfg.n_joints}, 2T={2 * cfg.frames})")
        x = skeleton_embedding(s_tilde, self.w4.value)
        h = x
        u = None
        for mix, _, block in self.mixer_layers:
            u = mix.forward(h)
            h = block.forward(u, x, training, rng)
        z = u + h
        self._s_tilde = s_tilde
        return self.head.forward(z)

    def backward(self, g_pred: np.ndarray) -> np.ndarray:
        """Accumulate all parameter gradients; returns dL/d(s_tilde)."""
        dz = self.head.backward(g_pred)
        dx = np.zeros_like(self._s_tilde @ self.w4.value)
        dh = None
        last = len(self.mixer_layers) - 1
        for idx in range(last, -1, -1):
            mix, _, block = self.mixer_layers[idx]
            upstream = dz if idx == last else dh
            du, dx0 = block.backward(upstream)
            if idx == last:
                du = du + dz
            dx += dx0
            dh = mix.backward(du)
        dx += dh
        self.w4.grad += self._s_tilde.reshape(-1, self.w4.shape[0]).T \
            @ dx.reshape(-1, self.w4.shape[1])
        return _flat_matmul(dx, self.w4.value.T)

    # -- accounting ----------------------------------------------------------

    def param_count(self) -> int:
        return sum(p.value.size for p in self.registry.values())

    # -- checkpointing --------------------------------------------------------

    def state_doc(self, optimizer_state: dict = None) -> dict:
        config = self.config.to_dict()
        config["topology"] = {"edges": [[i, j] for i, j in self.graph.edges],
                              "root": self.graph.root_index}
        doc = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": config,
            "params": {
                name: {"shape": list(p.value.shape), "data": p.value.reshape(-1).tolist()}
                for name, p in self.registry.items()
            },
            "bn_running_stats": {
                bn.name: {"mean": bn.running_mean.tolist(), "var": bn.running_var.tolist()}
                for bn in self.batch_norms()
            },
            "optimizer_state": optimizer_state,
        }
        return doc

    def save_checkpoint(self, path, optimizer_state: dict = None):
        with open(path, "w") as fh:
            json.dump(self.state_doc(optimizer_state), fh)
            fh.write("\n")

    def load_state_doc(self, doc: dict):
        if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format: {doc.get('format_version')}")
        for name, p in self.registry.items():
            entry = doc["params"].get(name)
            if entry is None:
                raise ValueError(f"checkpoint missing parameter '{name}'")
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if tuple(arr.shape) != p.value.shape:
                raise ShapeError(
                    f"checkpoint parameter '{name}' has shape {arr.shape}, "
                    f"expected {p.value.shape}")
            p.value[...] = arr
        for bn in self.batch_norms():
            stats = doc["bn_running_stats"].get(bn.name)
            if stats is None:
                raise ValueError(f"checkpoint missing batch-norm stats '{bn.name}'")
            bn.running_mean = np.asarray(stats["mean"], dtype=np.float64)
            bn.running_var = np.asarray(stats["var"], dtype=np.float64)


def build_model(config: ModelConfig, graph: SkeletonGraph, rng: Rng = None) -> MixerModel:
    return MixerModel(config, graph, rng)


def graph_from_config_dict(config: dict) -> SkeletonGraph:
    """Rebuild the topology stored inside a checkpoint's config block."""
    topo = config.get("topology")
    if topo is not None:
        return SkeletonGraph(n_joints=int(config["n_joints"]),
                             edges=tuple(tuple(e) for e in topo["edges"]),
                             root_index=int(topo["root"]))
    if int(config["n_joints"]) == 16:
        return human36m_topology()
    raise ValueError("checkpoint lacks a topology and is not the 16-joint default")


def load_checkpoint(path):
    """Returns (model, optimizer_state-or-None)."""
    with open(path) as fh:
        doc = json.load(fh)
    config = ModelConfig.from_dict(doc["config"])
    graph = graph_from_config_dict(doc["config"])
    model = MixerModel(config, graph)
    model.load_state_doc(doc)
    return model, doc.get("optimizer_state")


def count_params(model: MixerModel) -> dict:
    """Per-tensor table, registry total, and the closed-form total.

    The closed form (emitted in the report so numbers are auditable) is
        2*T*F + L*(4*F + 3*N*F + N^2 + 5*F*R + N*R + 2*R + F^2) + 5*F + 3
    counting, per mixer layer: the joint-mixing norm and maps, one adjacency
    modulation, two propagation layers with their per-joint multipliers, and
    two batch norms; plus the embedding and the head.
    """
    cfg = model.config
    n, f, r, t, l = cfg.n_joints, cfg.embed_dim, cfg.hidden_dim, cfg.frames, cfg.layers
    per_layer = 4 * f + 3 * n * f + n * n + 5 * f * r + n * r + 2 * r + f * f
    formula_total = 2 * t * f + l * per_layer + 5 * f + 3
    table = {name: int(p.value.size) for name, p in model.registry.items()}
    return {
        "per_tensor": table,
        "total": int(sum(table.values())),
        "formula_total": int(formula_total),
        "formula": "2*T*F + L*(4*F + 3*N*F + N^2 + 5*F*R + N*R + 2*R + F^2) + 5*F + 3",
    }
