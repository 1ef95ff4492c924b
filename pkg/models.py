"""
SpecTf Cloud Screening - Data Models

This module defines the domain types shared by every stage of the pipeline:
band grids, spectra, observation geometry, spectral cubes, labeled scenes
and sampled datasets, and the class-probability pair a classifier returns.

The models are designed to support:
- Variable band grids (a model is never tied to one instrument)
- Scene provenance on every sampled record, for leakage-free splits
- A common classifier interface shared by the transformer and the ANN
"""

import logging
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from constants import (
    CLASS_NAMES, CloudLabel, EMIT_EXCLUSION_WINDOWS, MASK_NO_DATA, RunMode, ValueKind,
    WAVELENGTH_CENTER, WAVELENGTH_MAX, WAVELENGTH_MIN, WAVELENGTH_SCALE
)
from errors import ContractError, DimensionError, FormatError
from tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BandGrid:
    """
    Band-center wavelengths of one instrument channelization.

    Attributes:
        wavelengths (np.ndarray): strictly increasing centers in nm, all in
            [300, 3000]

    The normalized form (b − 1440) / 600 is always recomputed from the
    wavelengths, never stored.
    """
    wavelengths: np.ndarray

    def __post_init__(self):
        values = np.array(self.wavelengths, dtype=np.float64).reshape(-1)
        if values.size == 0:
            raise ContractError("a band grid needs at least one band")
        if not np.all(np.isfinite(values)):
            raise ContractError("band centers must be finite")
        if np.any(np.diff(values) <= 0):
            raise ContractError("band centers must be strictly increasing")
        if values[0] < WAVELENGTH_MIN or values[-1] > WAVELENGTH_MAX:
            raise ContractError(
                f"band centers must lie in [{WAVELENGTH_MIN:g}, {WAVELENGTH_MAX:g}] nm, "
                f"got [{values[0]:g}, {values[-1]:g}]")
        values.setflags(write=False)
        object.__setattr__(self, "wavelengths", values)

    @property
    def count(self) -> int:
        return int(self.wavelengths.size)

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.wavelengths[0]), float(self.wavelengths[-1])

    def normalized(self, center: float = WAVELENGTH_CENTER,
                   scale: float = WAVELENGTH_SCALE) -> np.ndarray:
        return (self.wavelengths - center) / scale

    def __len__(self) -> int:
        return self.count

    def __eq__(self, other) -> bool:
        return isinstance(other, BandGrid) and np.array_equal(self.wavelengths, other.wavelengths)

    def __hash__(self):
        return hash(self.wavelengths.tobytes())

    def __repr__(self):
        low, high = self.span
        return f"<BandGrid(count={self.count}, span={low:g}-{high:g} nm)>"


@dataclass(eq=False)
class Spectrum:
    """
    TOA reflectance (or radiance) per band of one pixel.

    Attributes:
        values (np.ndarray): one value per band
        grid (BandGrid): band centers the values belong to
    """
    values: np.ndarray
    grid: BandGrid

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != self.grid.count:
            raise ContractError(
                f"spectrum has {self.values.size} values for a {self.grid.count}-band grid")

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(eq=False)
class GeometryRecord:
    """
    Observation geometry needed to convert radiance to TOA reflectance.

    Attributes:
        solar_zenith (float): solar zenith angle in radians
        earth_sun_distance (float): Earth-Sun distance in AU, in [0.95, 1.06]
        solar_irradiance (np.ndarray): exo-atmospheric irradiance per band,
            W·m⁻²·nm⁻¹, strictly positive
    """
    solar_zenith: float
    earth_sun_distance: float
    solar_irradiance: np.ndarray

    def __post_init__(self):
        self.solar_irradiance = np.array(self.solar_irradiance, dtype=np.float64).reshape(-1)
        if not 0.95 <= self.earth_sun_distance <= 1.06:
            raise ContractError(
                f"Earth-Sun distance {self.earth_sun_distance} AU outside [0.95, 1.06]")
        if np.any(~np.isfinite(self.solar_irradiance)) or np.any(self.solar_irradiance <= 0):
            raise ContractError("solar irradiance must be positive in every band")

    @property
    def cos_zenith(self) -> float:
        return float(np.cos(self.solar_zenith))


@dataclass(eq=False)
class SpectralCube:
    """
    A lines × samples × bands raster.

    Attributes:
        values (np.ndarray): float64 array shaped (lines, samples, bands)
        grid (BandGrid): band centers
        value_kind (ValueKind): radiance or TOA reflectance
        geometry (GeometryRecord): optional observation geometry
    """
    values: np.ndarray
    grid: BandGrid
    value_kind: ValueKind = ValueKind.TOA_REFLECTANCE
    geometry: Optional[GeometryRecord] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) <= 0:
            raise DimensionError(f"cube values must be a non-empty 3D array, got {self.values.shape}")
        if self.values.shape[2] != self.grid.count:
            raise DimensionError(
                f"cube has {self.values.shape[2]} bands but the grid has {self.grid.count}")
        if self.geometry is not None and self.geometry.solar_irradiance.size != self.grid.count:
            raise DimensionError("solar irradiance must have one value per band")

    @property
    def lines(self) -> int:
        return int(self.values.shape[0])

    @property
    def samples(self) -> int:
        return int(self.values.shape[1])

    @property
    def bands(self) -> int:
        return int(self.values.shape[2])

    def pixel(self, line: int, sample: int) -> Spectrum:
        return Spectrum(self.values[line, sample], self.grid)

    def pixels(self) -> np.ndarray:
        """All spectra as a (lines·samples) × bands array, line-major."""
        return self.values.reshape(-1, self.bands)


@dataclass(eq=False)
class LabeledScene:
    """
    A cube with a per-pixel label raster.

    Attributes:
        scene_id (str): provenance key
        cube (SpectralCube): reflectance cube
        labels (np.ndarray): uint8 (lines, samples) raster, 0 clear, 1 cloud,
            255 unlabeled
    """
    scene_id: str
    cube: SpectralCube
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.shape != (self.cube.lines, self.cube.samples):
            raise DimensionError(
                f"label raster {self.labels.shape} does not match cube "
                f"({self.cube.lines}, {self.cube.samples})")
        allowed = np.isin(self.labels, [int(CloudLabel.CLEAR), int(CloudLabel.CLOUD), MASK_NO_DATA])
        if not np.all(allowed):
            raise ContractError("label raster values must be 0, 1 or 255")


@dataclass(eq=False)
class LabeledDataset:
    """
    Sampled (spectrum, class) records sharing one band grid.

    Attributes:
        values (np.ndarray): N × bands reflectance
        labels (np.ndarray): N class indices (0 clear, 1 cloud)
        scene_ids (np.ndarray): N scene ids (provenance)
        grid (BandGrid): band centers of every record
        pixel_index (np.ndarray): optional N × 2 (line, sample) provenance
    """
    values: np.ndarray
    labels: np.ndarray
    scene_ids: np.ndarray
    grid: BandGrid
    pixel_index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, self.grid.count)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.scene_ids = np.asarray(self.scene_ids, dtype=object).reshape(-1)
        count = self.values.shape[0]
        if self.labels.size != count or self.scene_ids.size != count:
            raise DimensionError(
                f"dataset columns disagree: {count} spectra, {self.labels.size} labels, "
                f"{self.scene_ids.size} scene ids")
        if np.any((self.labels != CloudLabel.CLEAR) & (self.labels != CloudLabel.CLOUD)):
            raise ContractError("dataset labels must be 0 (clear) or 1 (cloud)")
        if self.pixel_index is not None:
            self.pixel_index = np.asarray(self.pixel_index, dtype=np.int64).reshape(count, 2)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def scenes(self) -> List[str]:
        return sorted(set(self.scene_ids.tolist()))

    def subset(self, mask: np.ndarray) -> "LabeledDataset":
        pixel_index = None if self.pixel_index is None else self.pixel_index[mask]
        return LabeledDataset(self.values[mask], self.labels[mask], self.scene_ids[mask],
                              self.grid, pixel_index)

    def spectrum(self, index: int) -> Spectrum:
        return Spectrum(self.values[index], self.grid)

    def class_counts(self) -> Dict[str, int]:
        return {CLASS_NAMES[label]: int(np.sum(self.labels == label)) for label in CloudLabel}


@dataclass(frozen=True)
class ClassProbabilities:
    """Probabilities for (clear, cloud), summing to 1"""
    p_clear: float
    p_cloud: float

    def __post_init__(self):
        for value in (self.p_clear, self.p_cloud):
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"probability {value} outside [0, 1]")
        if abs(self.p_clear + self.p_cloud - 1.0) > 1e-9:
            raise ContractError("class probabilities must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_clear, self.p_cloud])

    def probability(self, label: CloudLabel) -> float:
        return self.p_cloud if CloudLabel(label) is CloudLabel.CLOUD else self.p_clear

    @classmethod
    def from_row(cls, row: Sequence[float]) -> "ClassProbabilities":
        return cls(float(row[0]), float(row[1]))


class BaseClassifier(ABC):
    """
    Interface shared by every trainable classifier.

    Subclasses keep their learned tensors in ``parameters`` (insertion order
    is the file and optimizer order) and implement ``predict_batch``.

    Attributes:
        exclusion_windows (list): band windows removed before every forward
            pass; written to the model file so predict can reproduce them
        training_span (tuple): (low, high) nm of the grid the model was
            trained on, or None before training
        threshold (float): best-F1 decision threshold from validation, or None
        checksum (str): payload SHA-256 of the file the model was loaded from
        dropout_rate (float): rate applied in TRAIN mode
    """

    architecture = None

    def __init__(self, dropout_rate: float = 0.0):
        self.parameters: "OrderedDict[str, Tensor]" = OrderedDict()
        self.exclusion_windows: List[Tuple[float, float]] = [tuple(w) for w in EMIT_EXCLUSION_WINDOWS]
        self.training_span: Optional[Tuple[float, float]] = None
        self.threshold: Optional[float] = None
        self.dropout_rate = dropout_rate
        self.checksum: Optional[str] = None

    def _add_parameter(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        param = Tensor(np.zeros(shape), requires_grad=True, name=name)
        self.parameters[name] = param
        return param

    @abstractmethod
    def predict_batch(self, values: np.ndarray, wavelengths: np.ndarray,
                      mode: RunMode = RunMode.INFER,
                      rng: Optional[np.random.Generator] = None) -> Tensor:
        """
        Class probabilities for a batch of spectra sharing one grid.

        Args:
            values: B × n reflectance
            wavelengths: n band centers in nm
            mode: TRAIN enables dropout (and needs ``rng``)
            rng: dropout stream owned by the caller

        Returns:
            Tensor: B × 2 probabilities in (clear, cloud) order
        """

    @abstractmethod
    def config_dict(self) -> Dict:
        """Architecture configuration as written to the model manifest."""

    def param_count(self) -> int:
        return int(sum(param.size for param in self.parameters.values()))

    def snapshot(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, param.data.copy()) for name, param in self.parameters.items())

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, param in self.parameters.items():
            if snapshot[name].shape != param.shape:
                raise DimensionError(
                    f"parameter '{name}' expects shape {param.shape}, got {snapshot[name].shape}")
            param.data[...] = snapshot[name]

    def load_tensors(self, tensors: Dict[str, np.ndarray]) -> None:
        """
        Copy a model file's tensor directory into the parameters.

        Raises:
            FormatError: a name is missing or unexpected, or a shape differs
        """
        if set(tensors) != set(self.parameters):
            missing = sorted(set(self.parameters) - set(tensors))
            unexpected = sorted(set(tensors) - set(self.parameters))
            raise FormatError(f"tensor directory mismatch: missing {missing}, unexpected {unexpected}")
        for name, param in self.parameters.items():
            if tensors[name].shape != param.shape:
                raise FormatError(f"tensor '{name}' has shape {tensors[name].shape}, "
                                  f"expected {param.shape}")
            param.data[...] = tensors[name]

    def preprocessing_dict(self) -> Dict:
        """Preprocessing contract written next to ``config_dict`` in a model file."""
        return {
            "exclusion_windows": [list(window) for window in self.exclusion_windows],
            "training_span": None if self.training_span is None else list(self.training_span),
            "threshold": self.threshold,
        }

    def apply_preprocessing_dict(self, data: Dict) -> None:
        self.exclusion_windows = [tuple(float(v) for v in w) for w in data.get("exclusion_windows", [])]
        span = data.get("training_span")
        self.training_span = None if span is None else (float(span[0]), float(span[1]))
        threshold = data.get("threshold")
        self.threshold = None if threshold is None else float(threshold)
        self.checksum = data.get("payload_sha256")

    def predict_proba(self, values: np.ndarray, wavelengths: np.ndarray,
                      batch_size: int = 256) -> np.ndarray:
        """Inference-mode probabilities for N spectra, in fixed-size chunks."""
        values = np.asarray(values, dtype=np.float64)
        rows = [self.predict_batch(values[start:start + batch_size], wavelengths).data
                for start in range(0, values.shape[0], batch_size)]
        if not rows:
            return np.zeros((0, 2))
        return np.concatenate(rows, axis=0)
