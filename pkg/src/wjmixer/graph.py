"""Skeleton topology and its graph operators.

A skeleton is an undirected, connected, loop-free graph over joints. From it
we build the 0/1 adjacency A, the degree-normalized adjacency
A_hat = D^{-1/2} A D^{-1/2}, and the normalized Laplacian L = I - A_hat.
Loop-freeness matters: it keeps diag(I + s*L) constant at (1+s), which is
what makes the constant-diagonal damped-Jacobi iteration in fairing.py valid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError

H36M_JOINT_NAMES = (
    "Hip", "RHip", "RKnee", "RAnkle",
    "LHip", "LKnee", "LAnkle",
    "Spine", "Thorax", "Head",
    "LShoulder", "LElbow", "LWrist",
    "RShoulder", "RElbow", "RWrist",
)

H36M_EDGES = (
    (0, 1), (1, 2), (2, 3),
    (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9),
    (8, 10), (10, 11), (11, 12),
    (8, 13), (13, 14), (14, 15),
)


@dataclass(frozen=True)
class SkeletonGraph:
    """Joint topology: undirected edges over n_joints, rooted at root_index."""

    n_joints: int
    edges: tuple
    root_index: int = 0
    names: tuple = None

    def __post_init__(self):
        n = self.n_joints
        if n < 1:
            raise ValueError("graph needs at least one joint")
        if not (0 <= self.root_index < n):
            raise ValueError(f"root index {self.root_index} out of range for {n} joints")
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at joint {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) references a joint >= {n}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge ({i},{j})")
            seen.add(key)
        if not _connected(n, self.edges):
            raise ValueError("graph is not connected")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def is_tree(self) -> bool:
        return self.n_edges == self.n_joints - 1

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_joints, dtype=np.float64)
        for i, j in self.edges:
            deg[i] += 1.0
            deg[j] += 1.0
        return deg


def _connected(n: int, edges) -> bool:
    if n == 1:
        return True
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


@dataclass(frozen=True)
class GraphOperators:
    """Adjacency A, normalized adjacency A_hat, normalized Laplacian L."""

    adj: np.ndarray
    norm_adj: np.ndarray
    laplacian: np.ndarray
    sqrt_degrees: np.ndarray = field(repr=False, default=None)


def build_operators(g: SkeletonGraph) -> GraphOperators:
    """Build A, A_hat = D^{-1/2} A D^{-1/2}, and L = I - A_hat.

    A_hat is assembled from the entrywise-symmetric outer product of the
    inverse square-root degrees, so symmetry holds to the last bit.
    """
    n = g.n_joints
    adj = np.zeros((n, n), dtype=np.float64)
    for i, j in g.edges:
        adj[i, j] = 1.0
        adj[j, i] = 1.0
    deg = adj.sum(axis=1)
    if np.any(deg == 0):
        isolated = int(np.argmin(deg))
        raise ValueError(f"joint {isolated} is isolated (degree 0)")
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    norm_adj = adj * np.outer(d_inv_sqrt, d_inv_sqrt)
    laplacian = np.eye(n) - norm_adj
    return GraphOperators(adj=adj, norm_adj=norm_adj, laplacian=laplacian,
                          sqrt_degrees=np.sqrt(deg))


def human36m_topology() -> SkeletonGraph:
    """The 16-joint Human3.6M skeleton: a 15-edge tree rooted at the pelvis."""
    return SkeletonGraph(n_joints=16, edges=H36M_EDGES, root_index=0,
                         names=H36M_JOINT_NAMES)


def save_topology(g: SkeletonGraph, path) -> None:
    doc = {"n_joints": g.n_joints, "root": g.root_index,
           "edges": [[i, j] for i, j in g.edges]}
    if g.names is not None:
        doc["names"] = list(g.names)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_topology(path) -> SkeletonGraph:
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("n_joints", "root", "edges"):
        if key not in doc:
            raise ValueError(f"topology file missing field '{key}'")
    names = tuple(doc["names"]) if "names" in doc else None
    return SkeletonGraph(n_joints=int(doc["n_joints"]),
                         edges=tuple(tuple(e) for e in doc["edges"]),
                         root_index=int(doc["root"]), names=names)


def modulated_adj(base: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Adjacency modulation: the learned offset added entrywise, never
    renormalized, so asymmetry in q carries through."""
    if base.shape != q.shape:
        raise ShapeError(f"modulated_adj: shape mismatch {base.shape} vs {q.shape}")
    return base + q
