"""Topology-augmented graph collaborative filtering.

Interaction attributes become nodes of a user-attribute-item graph; embeddings
are trained with a relation-gated graph convolution and BPR.
"""

__version__ = "0.1.0"

from .argc import ModelConfig, forward
from .attributes import AttributeFusion, greedy_semantic_fusion
from .data import InteractionDataset, load_interactions, split_dataset
from .estimator import TAGCFRecommender, make_baseline
from .evaluation import MetricReport, path_overlap_analysis
from .graph import TripartiteGraph, build_graph
from .training import TrainConfig

__all__ = [
    "AttributeFusion", "InteractionDataset", "MetricReport", "ModelConfig", "TAGCFRecommender",
    "TrainConfig", "TripartiteGraph", "build_graph", "forward", "greedy_semantic_fusion",
    "load_interactions", "make_baseline", "path_overlap_analysis", "split_dataset",
]
