"""Per-target training loop, evaluation, and the feature-ablation harness.

Training is plain SGD on the mean-squared error of normalized targets, with
a per-epoch hyperbolic learning-rate decay ``lr0 / (1 + decay * epoch)`` and
global-norm gradient clipping. Validation MAE is reported in original target
units (predictions are inverse-transformed with the training normalizer),
and the best-validation parameter snapshot is kept alongside the final one.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .data import Dataset, Normalizer, fit_normalizer
from .errors import DataError, NumericalError, ShapeError
from .model import ModelConfig, ModelParams, MoleculeEncoding, forward, init_params

__all__ = [
    "TrainConfig",
    "EpochReport",
    "TrainResult",
    "EvalReport",
    "AblationRow",
    "ABLATION_FLAGS",
    "lr_at_epoch",
    "mse_loss",
    "mae",
    "predict",
    "evaluate",
    "train",
    "run_ablation",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters for one per-target run.

    Defaults follow the smaller-dataset regime (lr0 0.03, decay 0.01,
    500 epochs); large-corpus runs typically use lr0 0.01, decay 0.05,
    200 epochs. Batch size 10 and clip norm 10.0 are shared.
    """

    target_property: str
    lr0: float = 0.03
    decay: float = 0.01
    epochs: int = 500
    batch_size: int = 10
    clip_norm: float = 10.0
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not self.target_property:
            raise DataError("target_property must be set")
        if self.lr0 <= 0:
            raise DataError(f"lr0 must be > 0, got {self.lr0}")
        if self.decay < 0:
            raise DataError(f"decay must be >= 0, got {self.decay}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError(f"epochs and batch_size must be >= 1, "
                            f"got {self.epochs} and {self.batch_size}")
        if self.clip_norm <= 0:
            raise DataError(f"clip_norm must be > 0, got {self.clip_norm}")


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    lr: float
    train_mse: float        # normalized target space
    val_mae: float          # original target units
    grad_norm: float        # max post-clip global norm over the epoch's batches
    seconds: float


@dataclass
class TrainResult:
    final_params: ModelParams
    best_params: ModelParams
    best_epoch: int
    best_val_mae: float
    reports: list[EpochReport]
    normalizer: Normalizer
    config: TrainConfig
    vocabulary: list[str]


@dataclass(frozen=True)
class EvalReport:
    property_name: str
    n: int
    mae: float
    residuals: tuple[float, ...] | None = None


def lr_at_epoch(lr0: float, decay: float, epoch: int) -> float:
    """Hyperbolic decay: initial rate divided by (1 + decay * epoch index)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return lr0 / (1.0 + decay * epoch)


def mse_loss(graph: Graph | None, preds: Sequence, targets: Sequence[float]) -> Tensor:
    """Differentiable mean squared error; predictions may be 1x1 tensors or floats."""
    if len(preds) != len(targets):
        raise ShapeError(f"mse_loss: {len(preds)} predictions vs {len(targets)} targets")
    if not preds:
        raise ShapeError("mse_loss: empty prediction list")
    acc = None
    for pred, target in zip(preds, targets):
        if not isinstance(pred, Tensor):
            pred = ad.constant([[float(pred)]])
        diff = ad.sub(graph, pred, ad.constant([[float(target)]]))
        sq = ad.hadamard(graph, diff, diff)
        acc = sq if acc is None else ad.add(graph, acc, sq)
    return ad.scale(graph, acc, 1.0 / len(preds))


def mae(pred: Sequence[float], target: Sequence[float]) -> float:
    """Mean absolute error between two equal-length value sequences."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mae: {pred.shape} predictions vs {target.shape} targets")
    if pred.size == 0:
        raise ShapeError("mae: empty value lists")
    return float(np.mean(np.abs(pred - target)))


def _encodings(ds: Dataset, cfg: ModelConfig, vocabulary: Sequence[str],
               cache: dict) -> list[MoleculeEncoding]:
    out = []
    for mol in ds:
        enc = cache.get(id(mol))
        if enc is None:
            enc = MoleculeEncoding(mol, vocabulary, cfg)
            cache[id(mol)] = enc
        out.append(enc)
    return out


def predict(params: ModelParams, ds: Dataset, cfg: ModelConfig, vocabulary: Sequence[str],
            normalizer: Normalizer | None = None,
            encodings: Sequence[MoleculeEncoding] | None = None) -> np.ndarray:
    """Model outputs for every molecule, without recording any graph.

    Returns normalized-space values unless a normalizer is given, in which
    case predictions are inverse-transformed to original units.
    """
    if encodings is None:
        encodings = [MoleculeEncoding(m, vocabulary, cfg) for m in ds]
    raw = np.array([forward(None, mol, params, cfg, vocabulary, enc).item()
                    for mol, enc in zip(ds, encodings)])
    return normalizer.invert(raw) if normalizer is not None else raw


def evaluate(params: ModelParams, ds: Dataset, normalizer: Normalizer, cfg: ModelConfig,
             vocabulary: Sequence[str], target_property: str,
             with_residuals: bool = False,
             encodings: Sequence[MoleculeEncoding] | None = None) -> EvalReport:
    """MAE over a dataset in original target units. Pure: mutates nothing."""
    if len(ds) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if list(ds.element_vocabulary) != list(vocabulary):
        raise DataError(f"vocabulary mismatch: dataset has {ds.element_vocabulary}, "
                        f"model expects {list(vocabulary)}")
    targets = ds.target_values(target_property)
    preds = predict(params, ds, cfg, vocabulary, normalizer, encodings)
    residuals = tuple(float(r) for r in (preds - targets)) if with_residuals else None
    return EvalReport(property_name=target_property, n=len(ds), mae=mae(preds, targets),
                      residuals=residuals)


def train(train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig,
          epoch_callback: Callable[[EpochReport], None] | None = None) -> TrainResult:
    """SGD with per-epoch decayed learning rate, gradient clipping, and
    best-validation checkpointing.

    The normalizer is fit on the training partition only. Every epoch
    reshuffles the training indices from one seeded RNG stream, so a given
    seed reproduces the whole run bit for bit.
    """
    prop = cfg.target_property
    if prop not in train_ds.property_names or prop not in val_ds.property_names:
        raise DataError(f"target '{prop}' missing from dataset properties "
                        f"{train_ds.property_names}")
    vocabulary = list(train_ds.element_vocabulary)
    normalizer = fit_normalizer(train_ds, prop)
    params = init_params(cfg.model, len(vocabulary), train_ds.max_atom_count, cfg.seed)
    tensors = params.tensors()

    cache: dict = {}
    train_encs = _encodings(train_ds, cfg.model, vocabulary, cache)
    val_encs = _encodings(val_ds, cfg.model, vocabulary, cache)
    targets_norm = [normalizer.normalize(m.targets[prop]) for m in train_ds]

    n = len(train_ds)
    rng = np.random.default_rng(cfg.seed)
    reports: list[EpochReport] = []
    best_val = float("inf")
    best_params = params.copy()
    best_epoch = -1

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at_epoch(cfg.lr0, cfg.decay, epoch)
        order = rng.permutation(n)
        sq_sum = 0.0
        max_norm = 0.0
        for batch_idx, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = order[lo:lo + cfg.batch_size]
            try:
                ad.zero_grads(tensors)
                graph = Graph()
                preds = [forward(graph, train_ds[i], params, cfg.model, vocabulary,
                                 train_encs[i]) for i in batch]
                loss = mse_loss(graph, preds, [targets_norm[i] for i in batch])
                ad.backward(graph, loss)
            except NumericalError as err:
                raise NumericalError(
                    f"training aborted at epoch {epoch}, batch {batch_idx}: {err}") from err
            pre_norm = ad.clip_global_norm(tensors, cfg.clip_norm)
            post_norm = ad.global_grad_norm(tensors) if pre_norm > cfg.clip_norm else pre_norm
            max_norm = max(max_norm, post_norm)
            for t in tensors:
                t.values -= lr * t.grad
            sq_sum += loss.item() * len(batch)

        val_report = evaluate(params, val_ds, normalizer, cfg.model, vocabulary, prop,
                              encodings=val_encs)
        report = EpochReport(epoch=epoch, lr=lr, train_mse=sq_sum / n,
                             val_mae=val_report.mae, grad_norm=max_norm,
                             seconds=time.perf_counter() - t0)
        reports.append(report)
        if epoch_callback is not None:
            epoch_callback(report)
        if report.val_mae < best_val:
            best_val = report.val_mae
            best_params = params.copy()
            best_epoch = epoch

    return TrainResult(final_params=params, best_params=best_params, best_epoch=best_epoch,
                       best_val_mae=best_val, reports=reports, normalizer=normalizer,
                       config=cfg, vocabulary=vocabulary)


# ---------------------------------------------------------------------------
# ablations

ABLATION_FLAGS = {
    "no_count": "use_count_feature",
    "no_distance": "use_distance_feature",
    "no_atom_embed": "use_atom_embedding",
}


@dataclass(frozen=True)
class AblationRow:
    name: str
    val_mae: float
    test_mae: float


def run_ablation(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset, test_ds: Dataset,
                 which: Sequence[str],
                 epoch_callback: Callable[[str, EpochReport], None] | None = None
                 ) -> list[AblationRow]:
    """Train the full model and each requested single-feature ablation with
    identical seed and data; report best-validation and test MAE per variant."""
    unknown = [w for w in which if w not in ABLATION_FLAGS]
    if unknown:
        raise DataError(f"unknown ablation(s) {unknown}; valid: {sorted(ABLATION_FLAGS)}")
    rows = []
    for name in ["full", *which]:
        model_cfg = cfg.model
        if name != "full":
            model_cfg = replace(model_cfg, **{ABLATION_FLAGS[name]: False})
        variant_cfg = replace(cfg, model=model_cfg)
        callback = (lambda r, _name=name: epoch_callback(_name, r)) if epoch_callback else None
        result = train(train_ds, val_ds, variant_cfg, epoch_callback=callback)
        test_report = evaluate(result.best_params, test_ds, result.normalizer, model_cfg,
                               result.vocabulary, cfg.target_property)
        rows.append(AblationRow(name=name, val_mae=result.best_val_mae,
                                test_mae=test_report.mae))
    return rows
