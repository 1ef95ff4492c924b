"""
SpecTf Cloud Screening - Spectroscopic Transformer

Single-layer spectroscopic transformer. A spectrum is read as a set of
(reflectance, normalized wavelength) pairs, so one model runs unchanged on
any band grid. Dataflow per spectrum of n bands:

    pairs (n × 2) → linear 2→d → tanh → layernorm
      → h heads of softmax(Q Kᵀ / √d_k) V, no residual connection
      → concat → linear d→d → layernorm
      → linear → gelu → linear
      → maxpool over the n items → linear d→2 → softmax

Dropout (rate 0.1 by default) acts on the post-softmax attention weights and
after the feed-forward gelu, in TRAIN mode only.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from constants import (
    Architecture, CloudLabel, RunMode, WAVELENGTH_CENTER, WAVELENGTH_SCALE
)
from errors import ConfigError, ContractError, FormatError, NumericInputError
from file_formats import read_model_file, write_model_file
from models import BandGrid, BaseClassifier, ClassProbabilities, Spectrum
from spectra import derive_rng, resample_spectrum
from tensor import (
    Tensor, concat, dropout, gelu, layer_norm, linear, matmul, max_pool, scale,
    softmax, tanh, transpose
)

logger = logging.getLogger(__name__)


@dataclass
class SpecTfConfig:
    """
    Architecture hyper-parameters.

    Attributes:
        d_model (int): width of every item representation
        heads (int): attention heads; d_model must be a multiple
        dropout (float): TRAIN-mode dropout rate
        n_classes (int): output classes, (clear, cloud)
    """
    d_model: int = 64
    heads: int = 8
    dropout: float = 0.1
    n_classes: int = 2

    def __post_init__(self):
        if self.d_model < 1 or self.heads < 1:
            raise ConfigError("d_model and heads must be positive")
        if self.d_model < self.heads or self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} is not a multiple of heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        if self.n_classes != 2:
            raise ConfigError("the classifier head is binary (clear, cloud)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SpecTfConfig":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad SpecTf config: {exc}") from exc


@dataclass
class AttentionRecord:
    """
    Attention of one forward call.

    Attributes:
        weights (np.ndarray): post-softmax weights, heads × n × n for one
            spectrum (rows are queries and sum to 1)
        wavelengths (np.ndarray): band centers of the n items
        logits (np.ndarray): pre-softmax scaled dot products, same shape,
            kept only on request
    """
    weights: np.ndarray
    wavelengths: np.ndarray
    logits: Optional[np.ndarray] = None

    @property
    def heads(self) -> int:
        return int(self.weights.shape[0])


class SpecTfModel(BaseClassifier):
    """Parameters and preprocessing contract of one SpecTf network."""

    architecture = Architecture.SPECTF

    def __init__(self, config: SpecTfConfig, norm_center: float = WAVELENGTH_CENTER,
                 norm_scale: float = WAVELENGTH_SCALE):
        super().__init__(dropout_rate=config.dropout)
        self.config = config
        self.norm_center = float(norm_center)
        self.norm_scale = float(norm_scale)
        d, dk = config.d_model, config.head_dim

        self._add_parameter("embed.weight", (2, d))
        self._add_parameter("embed.bias", (d,))
        self._add_parameter("norm1.gain", (d,))
        self._add_parameter("norm1.bias", (d,))
        for i in range(config.heads):
            for role in ("query", "key", "value"):
                self._add_parameter(f"heads.{i}.{role}.weight", (d, dk))
                self._add_parameter(f"heads.{i}.{role}.bias", (dk,))
        self._add_parameter("out.weight", (d, d))
        self._add_parameter("out.bias", (d,))
        self._add_parameter("norm2.gain", (d,))
        self._add_parameter("norm2.bias", (d,))
        self._add_parameter("ff1.weight", (d, d))
        self._add_parameter("ff1.bias", (d,))
        self._add_parameter("ff2.weight", (d, d))
        self._add_parameter("ff2.bias", (d,))
        self._add_parameter("head.weight", (d, config.n_classes))
        self._add_parameter("head.bias", (config.n_classes,))

    def config_dict(self) -> Dict:
        return dict(self.config.to_dict(),
                    normalization={"center": self.norm_center, "scale": self.norm_scale})

    def predict_batch(self, values, wavelengths, mode=RunMode.INFER, rng=None) -> Tensor:
        probabilities, _ = forward_batch(self, values, wavelengths, mode, rng)
        return probabilities

    def __repr__(self):
        return (f"<SpecTfModel(d_model={self.config.d_model}, heads={self.config.heads}, "
                f"params={self.param_count()})>")


def param_count(config: SpecTfConfig) -> int:
    """Closed-form parameter count, including layernorm affine terms."""
    d, c = config.d_model, config.n_classes
    embedding = 2 * d + d
    norms = 2 * (2 * d)
    attention = 3 * (d * d + d) + (d * d + d)
    feed_forward = 2 * (d * d + d)
    head = d * c + c
    return embedding + norms + attention + feed_forward + head


def build(config: Optional[SpecTfConfig] = None, seed: int = 0) -> SpecTfModel:
    """
    Allocate and initialize a model.

    Weights are uniform in ±√(1/fan_in), biases zero, layernorm gain 1 and
    bias 0. The draw order is the parameter order, so a seed fixes every
    value bitwise.
    """
    config = config or SpecTfConfig()
    model = SpecTfModel(config)
    rng = derive_rng(seed, "init", "spectf")
    for name, param in model.parameters.items():
        if name.endswith(".gain"):
            param.data[...] = 1.0
        elif name.endswith(".weight"):
            bound = math.sqrt(1.0 / param.shape[0])
            param.data[...] = rng.uniform(-bound, bound, size=param.shape)
    logger.debug("built %r from seed %d", model, seed)
    return model


def forward_batch(model: SpecTfModel, values: np.ndarray, wavelengths: np.ndarray,
                  mode: RunMode = RunMode.INFER, rng: Optional[np.random.Generator] = None,
                  return_attention: bool = False,
                  keep_logits: bool = False) -> Tuple[Tensor, Optional[List[Dict[str, np.ndarray]]]]:
    """
    Run B spectra that share one grid as a single B × n × 2 input.

    Args:
        values: B × n reflectance (a 1D array is one spectrum)
        wavelengths: n band centers in nm
        mode: TRAIN applies dropout from ``rng``
        return_attention: also return per-head attention arrays

    Returns:
        (B × 2 probability tensor, list over heads of {"weights", "logits"}
        arrays shaped B × n × n, or None)

    Raises:
        ContractError: values and wavelengths disagree, or TRAIN without rng
        NumericInputError: non-finite reflectance
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    wavelengths = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
    if values.ndim != 2 or values.shape[1] != wavelengths.size:
        raise ContractError(
            f"spectra of shape {values.shape} do not match {wavelengths.size} wavelengths")
    if values.shape[0] == 0 or values.shape[1] == 0:
        raise ContractError("forward needs at least one spectrum of at least one band")
    if not np.all(np.isfinite(values)):
        raise NumericInputError("reflectance contains non-finite values")
    training = RunMode(mode) is RunMode.TRAIN and model.dropout_rate > 0
    if training and rng is None:
        raise ContractError("TRAIN mode needs a dropout stream")

    p = model.parameters
    config = model.config
    normalized = (wavelengths - model.norm_center) / model.norm_scale
    pairs = np.stack([values, np.broadcast_to(normalized, values.shape)], axis=-1)

    x = tanh(linear(Tensor(pairs), p["embed.weight"], p["embed.bias"]))
    x = layer_norm(x, p["norm1.gain"], p["norm1.bias"])

    inverse_sqrt_dk = 1.0 / math.sqrt(config.head_dim)
    attention = [] if return_attention else None
    head_outputs = []
    for i in range(config.heads):
        q = linear(x, p[f"heads.{i}.query.weight"], p[f"heads.{i}.query.bias"])
        k = linear(x, p[f"heads.{i}.key.weight"], p[f"heads.{i}.key.bias"])
        v = linear(x, p[f"heads.{i}.value.weight"], p[f"heads.{i}.value.bias"])
        logits = scale(matmul(q, transpose(k)), inverse_sqrt_dk)
        weights = softmax(logits, axis=-1)
        if attention is not None:
            attention.append({"weights": weights.data.copy(),
                              "logits": logits.data.copy() if keep_logits else None})
        if training:
            weights = dropout(weights, model.dropout_rate, rng)
        head_outputs.append(matmul(weights, v))

    y = linear(concat(head_outputs, axis=-1), p["out.weight"], p["out.bias"])
    y = layer_norm(y, p["norm2.gain"], p["norm2.bias"])
    y = gelu(linear(y, p["ff1.weight"], p["ff1.bias"]))
    if training:
        y = dropout(y, model.dropout_rate, rng)
    y = linear(y, p["ff2.weight"], p["ff2.bias"])

    pooled = max_pool(y, axis=1)
    probabilities = softmax(linear(pooled, p["head.weight"], p["head.bias"]), axis=-1)
    return probabilities, attention


def forward(model: SpecTfModel, spectrum: Spectrum, mode: RunMode = RunMode.INFER,
            rng: Optional[np.random.Generator] = None, return_attention: bool = False,
            keep_logits: bool = False):
    """
    Classify one spectrum.

    Returns:
        ClassProbabilities, or (ClassProbabilities, AttentionRecord) when
        ``return_attention`` is set
    """
    if not isinstance(spectrum, Spectrum):
        raise ContractError("forward takes a Spectrum; use forward_batch for arrays")
    probabilities, attention = forward_batch(model, spectrum.values, spectrum.grid.wavelengths,
                                             mode, rng, return_attention, keep_logits)
    result = ClassProbabilities.from_row(probabilities.data[0])
    if not return_attention:
        return result
    record = AttentionRecord(
        weights=np.stack([head["weights"][0] for head in attention]),
        wavelengths=spectrum.grid.wavelengths.copy(),
        logits=np.stack([head["logits"][0] for head in attention]) if keep_logits else None,
    )
    return result, record


def forward_variable_grid(model: SpecTfModel, spectrum: Spectrum) -> ClassProbabilities:
    """
    Classify a spectrum from any instrument grid.

    Same code path as ``forward``; only the wavelengths and n change. A grid
    reaching outside the training span is logged, never rejected.
    """
    if model.training_span is not None:
        low, high = spectrum.grid.span
        if low < model.training_span[0] or high > model.training_span[1]:
            logger.warning("grid %.1f-%.1f nm leaves the training span %.1f-%.1f nm",
                           low, high, model.training_span[0], model.training_span[1])
    return forward(model, spectrum)


def resampling_shift(model: SpecTfModel, values: np.ndarray, grid: BandGrid,
                     factor: int = 2) -> float:
    """
    Median |Δp_cloud| when spectra are linearly upsampled to ``factor``·n bands.

    Reported by the cross-grid experiments; no pass/fail threshold applies.
    """
    low, high = grid.span
    fine = BandGrid(np.linspace(low, high, factor * grid.count))
    coarse = model.predict_proba(values, grid.wavelengths)[:, CloudLabel.CLOUD]
    upsampled = model.predict_proba(resample_spectrum(values, grid, fine),
                                    fine.wavelengths)[:, CloudLabel.CLOUD]
    return float(np.median(np.abs(upsampled - coarse)))


# =============================================================================
# PERSISTENCE
# =============================================================================

def manifest(model: SpecTfModel) -> Dict:
    return dict(model.preprocessing_dict(), architecture=model.architecture.value,
                config=model.config_dict())


def save(model: SpecTfModel, path: str) -> str:
    """Write the model file; returns the payload checksum."""
    checksum = write_model_file(path, manifest(model), model.snapshot())
    logger.info("saved SpecTf model (%d parameters) to %s", model.param_count(), path)
    return checksum


def from_manifest(data: Mapping, tensors: Mapping[str, np.ndarray]) -> SpecTfModel:
    """
    Rebuild a model from a manifest and its tensors.

    Raises:
        ConfigError: invalid architecture configuration
        FormatError: tensor directory does not match the architecture
    """
    if data.get("architecture") != Architecture.SPECTF.value:
        raise FormatError(f"model file holds '{data.get('architecture')}', not spectf")
    config_data = dict(data.get("config", {}))
    normalization = config_data.pop("normalization", {})
    model = SpecTfModel(SpecTfConfig.from_dict(config_data),
                        normalization.get("center", WAVELENGTH_CENTER),
                        normalization.get("scale", WAVELENGTH_SCALE))
    model.load_tensors(tensors)
    model.apply_preprocessing_dict(data)
    return model


def load(path: str) -> SpecTfModel:
    data, tensors = read_model_file(path)
    return from_manifest(data, tensors)
