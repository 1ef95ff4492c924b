"""
SpecTf Cloud Screening - Training

Supervised training for both classifiers: mean cross-entropy, Adam with
decoupled weight decay, seeded shuffling, per-epoch validation and
best-by-AUC checkpoint retention.

Each optimizer batch is evaluated in fixed micro-batches (``MICRO_BATCH``)
whose gradients are summed in batch order, so the n × n attention memory
stays bounded while the result depends only on (data, config, seed).
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from config import get_config
from constants import Architecture, CloudLabel, PROBABILITY_FLOOR, RunMode
from errors import (
    ConfigError, ContractError, DimensionError, FormatError, NumericInputError,
    TrainingDivergedError, UndefinedMetricError
)
from file_formats import read_model_file, write_text_table
from metrics import ScoredSet, best_threshold, roc_auc
from models import BaseClassifier, ClassProbabilities, LabeledDataset
from spectra import band_mask, derive_rng
from tensor import GradTape, Tensor, backward, log_clamped, mean_all, pick, scale

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """
    Optimization settings.

    Attributes:
        learning_rate (float): constant step size
        batch_size (int): records per optimizer step
        epochs (int): passes over the training set
        weight_decay (float): decoupled decay coefficient
        dropout (float): overrides the model's rate when set
        seed (int): base seed for shuffling and dropout streams
        micro_batch (int): records per gradient evaluation inside a batch
    """
    learning_rate: float = 1e-4
    batch_size: int = 256
    epochs: int = 30
    weight_decay: float = 0.0
    dropout: Optional[float] = None
    seed: int = 0
    micro_batch: int = field(default_factory=lambda: get_config().MICRO_BATCH)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.batch_size < 1 or self.micro_batch < 1:
            raise ConfigError("batch and micro-batch sizes must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")

    @classmethod
    def for_architecture(cls, architecture: Architecture, **overrides) -> "TrainConfig":
        """Defaults per architecture: SpecTf 1e-4 / 256, ANN 1e-5 / 1024."""
        if Architecture(architecture) is Architecture.ANN:
            defaults = {"learning_rate": 1e-5, "batch_size": 1024}
        else:
            defaults = {"learning_rate": 1e-4, "batch_size": 256}
        defaults.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**defaults)


# =============================================================================
# OPTIMIZER
# =============================================================================

@dataclass
class AdamWHyper:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class OptimizerState:
    """First and second moments per parameter, and the step counter"""
    first: Dict[str, np.ndarray]
    second: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Tensor]) -> "OptimizerState":
        return cls({name: np.zeros_like(p.data) for name, p in params.items()},
                   {name: np.zeros_like(p.data) for name, p in params.items()})


def adamw_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
               state: OptimizerState, hyper: AdamWHyper) -> OptimizerState:
    """
    One bias-corrected Adam step with decoupled weight decay, in place.

    θ ← θ − lr·wd·θ, then θ ← θ − lr·m̂ / (√v̂ + eps).

    Raises:
        DimensionError: a gradient shape differs from its parameter
        TrainingDivergedError: a gradient is not finite; nothing is updated
    """
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise DimensionError(f"gradient for '{name}' has shape {grad.shape}, "
                                 f"parameter has {param.shape}")
        if not np.all(np.isfinite(grad)):
            bad = int(np.sum(~np.isfinite(grad)))
            raise TrainingDivergedError(
                f"non-finite gradient for '{name}' ({bad} of {grad.size} entries) "
                f"at optimizer step {state.step + 1}")

    state.step += 1
    correction1 = 1.0 - hyper.beta1 ** state.step
    correction2 = 1.0 - hyper.beta2 ** state.step
    for name, param in params.items():
        grad = grads[name]
        m = state.first[name]
        v = state.second[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * grad
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * grad * grad
        if hyper.weight_decay:
            param.data -= hyper.lr * hyper.weight_decay * param.data
        param.data -= hyper.lr * (m / correction1) / (np.sqrt(v / correction2) + hyper.eps)
    return state


# =============================================================================
# LOSS
# =============================================================================

def cross_entropy(probs: ClassProbabilities, label: CloudLabel) -> float:
    """−log(p_label) with p clamped to at least 1e-12."""
    return -math.log(max(probs.probability(label), PROBABILITY_FLOOR))


def batch_loss(probabilities: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of a B × 2 probability tensor, as a scalar tensor."""
    return scale(mean_all(log_clamped(pick(probabilities, labels), PROBABILITY_FLOOR)), -1.0)


def mean_cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    picked = probabilities[np.arange(labels.size), labels]
    return float(np.mean(-np.log(np.maximum(picked, PROBABILITY_FLOOR))))


# =============================================================================
# HISTORY
# =============================================================================

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float
    wall_time_s: float


@dataclass
class TrainHistory:
    """One record per completed epoch"""
    epochs: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def append(self, record: EpochRecord) -> None:
        self.epochs.append(record)

    def losses(self) -> List[float]:
        return [record.train_loss for record in self.epochs]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(record) for record in self.epochs],
                            columns=["epoch", "train_loss", "val_loss", "val_auc", "wall_time_s"])

    def write(self, path: str) -> None:
        write_text_table(self.to_frame(), path)


@dataclass
class Checkpoint:
    epoch: int
    val_auc: float
    threshold: Optional[float]
    parameters: Dict[str, np.ndarray]


@dataclass
class TrainResult:
    """Final model plus the retained best-validation-AUC checkpoint"""
    model: BaseClassifier
    best: Checkpoint
    history: TrainHistory


# =============================================================================
# LOOP
# =============================================================================

def model_inputs(model: BaseClassifier, dataset: LabeledDataset) -> LabeledDataset:
    """Apply the model's exclusion windows (idempotent on already-masked data)."""
    reduced, _ = band_mask(dataset, windows=model.exclusion_windows)
    return reduced


def _batch_gradients(model: BaseClassifier, values: np.ndarray, labels: np.ndarray,
                     wavelengths: np.ndarray, micro_batch: int,
                     rng: np.random.Generator):
    """Summed micro-batch gradients of the batch-mean loss, and that loss."""
    params = model.parameters
    total = {name: np.zeros_like(p.data) for name, p in params.items()}
    loss_sum = 0.0
    count = labels.size
    for start in range(0, count, micro_batch):
        stop = min(start + micro_batch, count)
        with GradTape() as tape:
            probabilities = model.predict_batch(values[start:stop], wavelengths, RunMode.TRAIN, rng)
            loss = batch_loss(probabilities, labels[start:stop])
            weighted = scale(loss, (stop - start) / count)
        grads = backward(tape, weighted, params)
        for name in total:
            total[name] += grads[name]
        loss_sum += loss.item() * (stop - start)
    return total, loss_sum / count


def _validate(model: BaseClassifier, validation: LabeledDataset):
    probabilities = model.predict_proba(validation.values, validation.grid.wavelengths)
    val_loss = mean_cross_entropy(probabilities, validation.labels)
    scored = ScoredSet(probabilities[:, CloudLabel.CLOUD], validation.labels)
    try:
        auc = roc_auc(scored).auc
        threshold, _ = best_threshold(scored)
    except UndefinedMetricError:
        auc, threshold = float("nan"), None
    return val_loss, auc, threshold


def train(model: BaseClassifier, train_set: LabeledDataset, validation_set: LabeledDataset,
          config: Optional[TrainConfig] = None) -> TrainResult:
    """
    Train ``model`` in place.

    The model's exclusion windows are applied to both sets first. After
    training the model holds the final epoch's parameters; the
    best-validation-AUC parameters are returned in ``result.best``.

    Raises:
        ContractError: empty training or validation set
        TrainingDivergedError: non-finite loss or gradient; the model is
            restored to the last good epoch, which the error also carries
    """
    config = config or TrainConfig.for_architecture(model.architecture)
    if len(train_set) == 0:
        raise ContractError("training set is empty")
    if len(validation_set) == 0:
        raise ContractError("validation set is empty")
    for name, dataset in (("training", train_set), ("validation", validation_set)):
        if not np.all(np.isfinite(dataset.values)):
            raise NumericInputError(f"{name} set contains non-finite reflectance")
    if config.dropout is not None:
        model.dropout_rate = config.dropout

    train_set = model_inputs(model, train_set)
    validation_set = model_inputs(model, validation_set)
    model.training_span = train_set.grid.span
    wavelengths = train_set.grid.wavelengths

    params = model.parameters
    state = OptimizerState.zeros_like(params)
    hyper = AdamWHyper(config.learning_rate, config.beta1, config.beta2, config.eps,
                       config.weight_decay)
    history = TrainHistory()
    last_good = model.snapshot()
    best = Checkpoint(0, float("-inf"), None, last_good)
    logger.info("training %s (%d parameters) on %d records, validating on %d",
                model.architecture.value, model.param_count(), len(train_set), len(validation_set))

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = derive_rng(config.seed, "shuffle", epoch).permutation(len(train_set))
        dropout_rng = derive_rng(config.seed, "dropout", epoch)
        loss_total = 0.0
        try:
            for start in range(0, order.size, config.batch_size):
                batch = order[start:start + config.batch_size]
                grads, loss = _batch_gradients(model, train_set.values[batch],
                                               train_set.labels[batch], wavelengths,
                                               config.micro_batch, dropout_rng)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite training loss in epoch {epoch}")
                adamw_step(params, grads, state, hyper)
                loss_total += loss * batch.size
            val_loss, val_auc, threshold = _validate(model, validation_set)
            if not math.isfinite(val_loss):
                raise TrainingDivergedError(f"non-finite validation loss in epoch {epoch}")
        except (TrainingDivergedError, NumericInputError) as exc:
            # non-finite activations only arise from diverged parameters here
            model.restore(last_good)
            logger.warning("training diverged in epoch %d: %s; restored epoch %d parameters",
                           epoch, exc, epoch - 1)
            raise TrainingDivergedError(str(exc), checkpoint=last_good, epoch=epoch) from exc

        record = EpochRecord(epoch, loss_total / len(train_set), val_loss, val_auc,
                             time.perf_counter() - started)
        history.append(record)
        model.threshold = threshold
        last_good = model.snapshot()
        if val_auc > best.val_auc:
            best = Checkpoint(epoch, val_auc, threshold, last_good)
        logger.info("epoch %d/%d: train loss %.5f, val loss %.5f, val AUC %.5f (%.1f s)",
                    epoch, config.epochs, record.train_loss, val_loss, val_auc, record.wall_time_s)

    if best.epoch == 0:
        # validation AUC was undefined in every epoch
        best = Checkpoint(config.epochs, float("nan"), model.threshold, last_good)
    return TrainResult(model, best, history)


# =============================================================================
# PERSISTENCE
# =============================================================================

def save_classifier(model: BaseClassifier, path: str) -> str:
    """Write either architecture; returns the payload checksum."""
    if model.architecture is Architecture.ANN:
        from reference_models import ann_save
        return ann_save(model, path)
    from spectf import save
    return save(model, path)


def load_classifier(path: str) -> BaseClassifier:
    """Read a model file of either architecture."""
    from reference_models import ann_from_manifest
    from spectf import from_manifest

    manifest, tensors = read_model_file(path)
    architecture = manifest.get("architecture")
    if architecture == Architecture.SPECTF.value:
        return from_manifest(manifest, tensors)
    if architecture == Architecture.ANN.value:
        return ann_from_manifest(manifest, tensors)
    raise FormatError(f"{path}: unknown architecture '{architecture}'")


def checkpoint_model(model: BaseClassifier, checkpoint: Checkpoint) -> BaseClassifier:
    """A copy of ``model`` holding the checkpoint's parameters and threshold."""
    manifest = dict(model.preprocessing_dict(), architecture=model.architecture.value,
                    config=model.config_dict())
    if model.architecture is Architecture.ANN:
        from reference_models import ann_from_manifest
        copy = ann_from_manifest(manifest, checkpoint.parameters)
    else:
        from spectf import from_manifest
        copy = from_manifest(manifest, checkpoint.parameters)
    copy.threshold = checkpoint.threshold
    copy.dropout_rate = model.dropout_rate
    return copy
