"""
SpecTf Cloud Screening - Reference Models

Two comparison points for the transformer:

- The operational L2A band-threshold screen: a pixel is cloud when
  (b450 > 0.28 and b1250 > 0.46 and b1650 > 0.22) or b1380 > 0.1,
  read from the nearest bands in TOA reflectance. Inequalities are strict.
- A residual feed-forward network on a fixed 268-band input:

      x ─ linear 268→W ─ layernorm ───────────────────────────────┐
      x ─ linear ─ layernorm ─ gelu ─ dropout                      +─ gelu ─ linear W→2 ─ softmax
          ─ linear W→W ─ layernorm ─ gelu ─ dropout ──────────────┘

  with W = 1400 and dropout 0.2. Unlike SpecTf it cannot accept any other
  band count.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Mapping, Optional, Union

import numpy as np

from constants import (
    Architecture, BASELINE_T1250, BASELINE_T1380, BASELINE_T1650, BASELINE_T450,
    CloudLabel, RunMode
)
from errors import ConfigError, ContractError, FormatError, NumericInputError, OutOfSpanError
from file_formats import read_model_file, write_model_file
from models import BandGrid, BaseClassifier, ClassProbabilities, Spectrum
from spectra import derive_rng
from tensor import Tensor, add, dropout, gelu, layer_norm, linear, softmax

logger = logging.getLogger(__name__)


# =============================================================================
# L2A BASELINE
# =============================================================================

@dataclass(frozen=True)
class BaselineThresholds:
    """TOA reflectance thresholds of the band-threshold screen"""
    t450: float = BASELINE_T450
    t1250: float = BASELINE_T1250
    t1650: float = BASELINE_T1650
    t1380: float = BASELINE_T1380

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not 0.0 < value < 1.0:
                raise ConfigError(f"baseline threshold {name}={value} outside (0, 1)")


BASELINE_WAVELENGTHS = {"t450": 450.0, "t1250": 1250.0, "t1650": 1650.0, "t1380": 1380.0}


def nearest_band(grid: BandGrid, target: float) -> int:
    """
    Index of the band center closest to ``target``; ties go to the lower index.

    Raises:
        OutOfSpanError: target further than one band spacing beyond either
            end of the grid
    """
    centers = grid.wavelengths
    low, high = grid.span
    if grid.count > 1:
        below, above = centers[1] - centers[0], centers[-1] - centers[-2]
    else:
        below = above = 0.0
    if target < low - below or target > high + above:
        raise OutOfSpanError(f"{target:g} nm is outside the grid span {low:g}-{high:g} nm")
    return int(np.argmin(np.abs(centers - target)))


def baseline_indices(grid: BandGrid) -> Dict[str, int]:
    return {name: nearest_band(grid, wavelength) for name, wavelength in BASELINE_WAVELENGTHS.items()}


def baseline_scores(values: np.ndarray, grid: BandGrid,
                    thresholds: Optional[BaselineThresholds] = None) -> np.ndarray:
    """
    Evaluate the screen on N × n spectra.

    Returns:
        float array of 1.0 (cloud) and 0.0 (clear), usable as a score
    """
    thresholds = thresholds or BaselineThresholds()
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != grid.count:
        raise ContractError(f"spectra have {values.shape[-1]} bands, grid has {grid.count}")
    idx = baseline_indices(grid)
    opaque = ((values[..., idx["t450"]] > thresholds.t450)
              & (values[..., idx["t1250"]] > thresholds.t1250)
              & (values[..., idx["t1650"]] > thresholds.t1650))
    cirrus = values[..., idx["t1380"]] > thresholds.t1380
    return (opaque | cirrus).astype(np.float64)


def baseline_classify(spectrum: Union[Spectrum, np.ndarray], grid: Optional[BandGrid] = None,
                      thresholds: Optional[BaselineThresholds] = None) -> CloudLabel:
    """Classify one spectrum with the band-threshold screen."""
    if isinstance(spectrum, Spectrum):
        grid = grid or spectrum.grid
        spectrum = spectrum.values
    if grid is None:
        raise ContractError("baseline_classify needs the grid of a bare array")
    score = baseline_scores(np.asarray(spectrum)[None, :], grid, thresholds)[0]
    return CloudLabel.CLOUD if score > 0 else CloudLabel.CLEAR


# =============================================================================
# RESIDUAL ANN
# =============================================================================

@dataclass
class AnnConfig:
    input_dim: int = 268
    width: int = 1400
    dropout: float = 0.2
    n_classes: int = 2

    def __post_init__(self):
        if self.input_dim < 2 or self.width < 2:
            raise ConfigError("input_dim and width must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        if self.n_classes != 2:
            raise ConfigError("the classifier head is binary (clear, cloud)")

    def to_dict(self) -> Dict:
        return asdict(self)


class AnnModel(BaseClassifier):
    """Fixed-length residual network; ``wavelengths`` are only length-checked."""

    architecture = Architecture.ANN

    def __init__(self, config: AnnConfig):
        super().__init__(dropout_rate=config.dropout)
        self.config = config
        n, w = config.input_dim, config.width
        self._add_parameter("residual.weight", (n, w))
        self._add_parameter("residual.bias", (w,))
        self._add_parameter("residual_norm.gain", (w,))
        self._add_parameter("residual_norm.bias", (w,))
        self._add_parameter("fc1.weight", (n, w))
        self._add_parameter("fc1.bias", (w,))
        self._add_parameter("norm1.gain", (w,))
        self._add_parameter("norm1.bias", (w,))
        self._add_parameter("fc2.weight", (w, w))
        self._add_parameter("fc2.bias", (w,))
        self._add_parameter("norm2.gain", (w,))
        self._add_parameter("norm2.bias", (w,))
        self._add_parameter("out.weight", (w, config.n_classes))
        self._add_parameter("out.bias", (config.n_classes,))

    def config_dict(self) -> Dict:
        return self.config.to_dict()

    def predict_batch(self, values, wavelengths=None, mode=RunMode.INFER, rng=None) -> Tensor:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape[-1] != self.config.input_dim:
            raise ContractError(f"this network takes exactly {self.config.input_dim} bands, "
                                f"got {values.shape[-1]}")
        if wavelengths is not None and np.asarray(wavelengths).size != values.shape[-1]:
            raise ContractError("spectra and wavelengths disagree in length")
        if not np.all(np.isfinite(values)):
            raise NumericInputError("reflectance contains non-finite values")
        training = RunMode(mode) is RunMode.TRAIN and self.dropout_rate > 0
        if training and rng is None:
            raise ContractError("TRAIN mode needs a dropout stream")

        p = self.parameters
        x = Tensor(values)
        residual = layer_norm(linear(x, p["residual.weight"], p["residual.bias"]),
                              p["residual_norm.gain"], p["residual_norm.bias"])
        h = gelu(layer_norm(linear(x, p["fc1.weight"], p["fc1.bias"]),
                            p["norm1.gain"], p["norm1.bias"]))
        if training:
            h = dropout(h, self.dropout_rate, rng)
        h = gelu(layer_norm(linear(h, p["fc2.weight"], p["fc2.bias"]),
                            p["norm2.gain"], p["norm2.bias"]))
        if training:
            h = dropout(h, self.dropout_rate, rng)
        h = gelu(add(residual, h))
        return softmax(linear(h, p["out.weight"], p["out.bias"]), axis=-1)

    def __repr__(self):
        return f"<AnnModel(input_dim={self.config.input_dim}, width={self.config.width})>"


def layer_param_counts(config: Optional[AnnConfig] = None) -> Dict[str, int]:
    """Weights plus biases of each linear layer; layernorms reported separately."""
    config = config or AnnConfig()
    n, w, c = config.input_dim, config.width, config.n_classes
    return {
        "residual": n * w + w,
        "fc1": n * w + w,
        "fc2": w * w + w,
        "out": w * c + c,
        "layernorms": 3 * 2 * w,
    }


def ann_build(seed: int = 0, config: Optional[AnnConfig] = None) -> AnnModel:
    """Allocate and initialize with the same scheme as the transformer."""
    config = config or AnnConfig()
    model = AnnModel(config)
    rng = derive_rng(seed, "init", "ann")
    for name, param in model.parameters.items():
        if name.endswith(".gain"):
            param.data[...] = 1.0
        elif name.endswith(".weight"):
            bound = math.sqrt(1.0 / param.shape[0])
            param.data[...] = rng.uniform(-bound, bound, size=param.shape)
    logger.debug("built %r from seed %d", model, seed)
    return model


def ann_forward(ann: AnnModel, spectrum: Union[Spectrum, np.ndarray],
                mode: RunMode = RunMode.INFER,
                rng: Optional[np.random.Generator] = None) -> ClassProbabilities:
    """
    Classify one fixed-length spectrum.

    Raises:
        ContractError: the spectrum does not have exactly ``input_dim`` bands
    """
    values = spectrum.values if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    probabilities = ann.predict_batch(values.reshape(1, -1), None, mode, rng)
    return ClassProbabilities.from_row(probabilities.data[0])


def ann_save(model: AnnModel, path: str) -> str:
    data = dict(model.preprocessing_dict(), architecture=model.architecture.value,
                config=model.config_dict())
    return write_model_file(path, data, model.snapshot())


def ann_from_manifest(data: Mapping, tensors: Mapping[str, np.ndarray]) -> AnnModel:
    if data.get("architecture") != Architecture.ANN.value:
        raise FormatError(f"model file holds '{data.get('architecture')}', not ann")
    try:
        config = AnnConfig(**data.get("config", {}))
    except TypeError as exc:
        raise ConfigError(f"bad ANN config: {exc}") from exc
    model = AnnModel(config)
    model.load_tensors(tensors)
    model.apply_preprocessing_dict(data)
    return model


def ann_load(path: str) -> AnnModel:
    data, tensors = read_model_file(path)
    return ann_from_manifest(data, tensors)
