"""Skeleton-based human activity segmentation with multi-stage graph
convolution, a Transformer encoder, and late feature fusion, built on a
small numpy reverse-mode autodiff engine."""

from .data import (
    DatasetSplit,
    LabelCatalog,
    SkeletonSequence,
    SkeletonTopology,
    SyntheticSpec,
    default_topology,
    generate_synthetic,
)
from .estimators import FusionSegmenter, POGCNSegmenter, TransformerSegmenter
from .graph import build_adjacency
from .losses import LossConfig, total_loss
from .metrics import MetricsReport, segmental_f1
from .models import ModelConfig, TransformerConfig, build_model
from .training import TrainConfig, evaluate, train_fusion, train_model

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "FusionSegmenter",
    "LabelCatalog",
    "LossConfig",
    "MetricsReport",
    "ModelConfig",
    "POGCNSegmenter",
    "SkeletonSequence",
    "SkeletonTopology",
    "SyntheticSpec",
    "TrainConfig",
    "TransformerConfig",
    "TransformerSegmenter",
    "build_adjacency",
    "build_model",
    "default_topology",
    "evaluate",
    "generate_synthetic",
    "segmental_f1",
    "total_loss",
    "train_fusion",
    "train_model",
]
