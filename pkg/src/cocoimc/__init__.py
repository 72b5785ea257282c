"""Incomplete two-view clustering with delayed-activation target networks,
mutual-information consistency and cross-view latent imputation."""

from .data import MaskSpec, MultiViewDataset, generate_mask, load_views, normalize, synth_two_view
from .estimator import CoCoIMC, check_views
from .evaluate import acc, ari, build_common_representation, kmeans, nmi, score
from .losses import LossWeights
from .trainer import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "CoCoIMC",
    "check_views",
    "MaskSpec",
    "MultiViewDataset",
    "generate_mask",
    "load_views",
    "normalize",
    "synth_two_view",
    "acc",
    "ari",
    "nmi",
    "score",
    "kmeans",
    "build_common_representation",
    "LossWeights",
    "TrainConfig",
    "fit",
]
