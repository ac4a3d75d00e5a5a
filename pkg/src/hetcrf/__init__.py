"""Dual-channel self-supervised learning for heterogeneous graphs:
masked feature/meta-path reconstruction plus contrastive learning over
GCN-reaggregated views with positive-sample augmentation."""

from .graph import (HeteroGraph, MetaPathSpec, SparseAdj, SyntheticSpec,
                    compose_metapath_adjacency, count_metapath_paths,
                    generate_synthetic, load_dataset, save_dataset)
from .metapath import (PosMatrix, build_positive_matrix, fuse_adjacency,
                       khop_combine, metapath_connection_counts,
                       pathsim_matrix, sym_normalize, topk_filter)
from .objectives import LossWeights, gradient_balance_probe
from .trainer import TrainConfig, TrainedState, fit, precompute

__all__ = [
    "HeteroGraph", "MetaPathSpec", "SparseAdj", "SyntheticSpec",
    "compose_metapath_adjacency", "count_metapath_paths",
    "generate_synthetic", "load_dataset", "save_dataset",
    "PosMatrix", "build_positive_matrix", "fuse_adjacency", "khop_combine",
    "metapath_connection_counts", "pathsim_matrix", "sym_normalize",
    "topk_filter", "LossWeights", "gradient_balance_probe",
    "TrainConfig", "TrainedState", "fit", "precompute",
]

__version__ = "0.1.0"
