"""Heterogeneous graph triplet-attention network for drug-target-disease prediction."""

from .graph import HeteroGraph, NodeId, NodeType, Triplet, build_graph, neighbor_pairs
from .model import HeTriNetModel, ModelConfig, PairMessageMode
from .train import TrainConfig, TrainReport, fit

__version__ = "0.1.0"

__all__ = [
    "HeteroGraph",
    "NodeId",
    "NodeType",
    "Triplet",
    "build_graph",
    "neighbor_pairs",
    "HeTriNetModel",
    "ModelConfig",
    "PairMessageMode",
    "TrainConfig",
    "TrainReport",
    "fit",
]
