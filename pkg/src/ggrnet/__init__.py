"""Gated graph recursive network for molecular property regression.

The package is self-contained: a minimal reverse-mode autodiff core
(:mod:`ggrnet.autodiff`), molecule ingestion and normalization
(:mod:`ggrnet.data`), the model itself (:mod:`ggrnet.model`), the SGD
training/evaluation protocol (:mod:`ggrnet.training`), binary checkpoints
(:mod:`ggrnet.checkpoint`), and a CLI (``ggrnet`` / ``python -m ggrnet``).
"""

from .autodiff import Graph, Tensor, backward, clip_global_norm, zero_grads
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    DEFAULT_ELEMENTS,
    CommentSchema,
    Dataset,
    Molecule,
    Normalizer,
    SplitSpec,
    fit_normalizer,
    inverse_distance,
    load_dataset,
    parse_extended_xyz,
    parse_tabular,
    split,
)
from .model import ModelConfig, ModelParams, forward, init_params
from .training import (
    EpochReport,
    TrainConfig,
    TrainResult,
    evaluate,
    lr_at_epoch,
    mae,
    mse_loss,
    run_ablation,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Graph", "Tensor", "backward", "clip_global_norm", "zero_grads",
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "DEFAULT_ELEMENTS", "CommentSchema", "Dataset", "Molecule", "Normalizer",
    "SplitSpec", "fit_normalizer", "inverse_distance", "load_dataset",
    "parse_extended_xyz", "parse_tabular", "split",
    "ModelConfig", "ModelParams", "forward", "init_params",
    "EpochReport", "TrainConfig", "TrainResult", "evaluate", "lr_at_epoch",
    "mae", "mse_loss", "run_ablation", "train",
    "__version__",
]
