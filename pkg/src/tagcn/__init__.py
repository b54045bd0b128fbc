"""Temporal attention-augmented graph convolutional networks for skeleton
action recognition, on a small numpy autograd core."""

from ._kernels import BACKEND
from .autograd import ShapeError, Tensor, grad_check
from .complexity import CostReport, compare, count_flops, count_params
from .graph import SkeletonTopology, graph_for, partition, resolve_topology
from .model import (ModelConfig, MultiStreamModel, Network, build_multistream,
                    build_stgcn_baseline, build_tagcn, ensemble, predict, stgcn_config,
                    tagcn_config)
from .tam import TemporalAttention
from .training import TrainConfig, cross_entropy, evaluate, lr_at, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ShapeError", "Tensor", "grad_check",
    "CostReport", "compare", "count_flops", "count_params",
    "SkeletonTopology", "graph_for", "partition", "resolve_topology",
    "ModelConfig", "MultiStreamModel", "Network", "build_multistream",
    "build_stgcn_baseline", "build_tagcn", "ensemble", "predict", "stgcn_config",
    "tagcn_config", "TemporalAttention",
    "TrainConfig", "cross_entropy", "evaluate", "lr_at", "sgd_step", "train",
]
