"""2D-to-3D human pose lifting with weighted-Jacobi graph mixing layers.

The package has three strands: the implicit-fairing solver the architecture
is derived from (fairing), the hand-differentiated network and its training
stack (layers, model, train, audit), and the surrounding data and evaluation
machinery (graph, data, metrics, cli).
"""

from .graph import SkeletonGraph, build_operators, human36m_topology
from .model import MixerModel, ModelConfig, build_model, count_params, load_checkpoint
from .train import TrainConfig, train

__all__ = [
    "SkeletonGraph", "build_operators", "human36m_topology",
    "MixerModel", "ModelConfig", "build_model", "count_params", "load_checkpoint",
    "TrainConfig", "train",
]

__version__ = "0.1.0"
