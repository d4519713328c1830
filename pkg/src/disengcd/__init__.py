"""Disentangled graph cognitive diagnosis with a searchable meta-multigraph
student module, graph-attention exercise/concept modules, and first-order
bilevel training."""

from .data import (
    Dataset,
    SplitSpec,
    SyntheticTruth,
    delete_records,
    generate_synthetic,
    inject_noise,
    load_dataset,
    split,
)
from .evaluation import MetricReport, metrics
from .graphs import (
    DependencyGraph,
    InteractionGraph,
    RelationGraph,
    build_interaction_graph,
    disentangle_dependency_graph,
    disentangle_relation_graph,
)
from .sparse import SparseAdjacency
from .student_meta import MetaMultigraph, export_structure, forward_meta_multigraph
from .trainer import DisenModel, TrainConfig, load_checkpoint, save_checkpoint, train_bilevel

__all__ = [
    "Dataset",
    "DependencyGraph",
    "DisenModel",
    "InteractionGraph",
    "MetaMultigraph",
    "MetricReport",
    "RelationGraph",
    "SparseAdjacency",
    "SplitSpec",
    "SyntheticTruth",
    "TrainConfig",
    "build_interaction_graph",
    "delete_records",
    "disentangle_dependency_graph",
    "disentangle_relation_graph",
    "export_structure",
    "forward_meta_multigraph",
    "generate_synthetic",
    "inject_noise",
    "load_dataset",
    "load_checkpoint",
    "metrics",
    "save_checkpoint",
    "split",
    "train_bilevel",
]

__version__ = "0.1.0"
