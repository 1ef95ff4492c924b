"""
SpecTf Cloud Screening - Synthetic Scenes

Desk-scale verification corpus. Clear pixels are smooth linear surface
continua multiplied by an atmospheric transmittance built from
Gaussian-shaped absorption features; the deep water-vapor analogs near
1380 nm and 1880 nm saturate, so their floors sit at the configured trough
floor. Cloud pixels mix in a bright broadband component that sits above
most of the absorbing layer and therefore lifts those floors.

Every draw comes from a stream derived from (seed, scene id), so a corpus is
reproducible scene by scene. Parameters live in a JSON file
(``configs/synthetic_default.json``).
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from constants import (
    CloudLabel, MASK_NO_DATA, ValueKind, WAVELENGTH_CENTER, WAVELENGTH_SCALE
)
from errors import ConfigError
from file_formats import write_cube, write_dataset_table, write_mask
from models import BandGrid, GeometryRecord, LabeledScene, SpectralCube
from spectra import (
    aviris_ng_like_grid, derive_rng, emit_like_grid, sample_dataset, split_by_scene
)

logger = logging.getLogger(__name__)

SOLAR_TEMPERATURE_K = 5778.0
SOLAR_PEAK_IRRADIANCE = 2.0  # W·m⁻²·nm⁻¹


@dataclass
class AbsorptionFeature:
    """Gaussian absorption; depth above 1 saturates to a flat floor"""
    center: float
    width: float
    depth: float


def _default_features() -> List[AbsorptionFeature]:
    return [
        AbsorptionFeature(760.0, 4.0, 0.6),
        AbsorptionFeature(940.0, 20.0, 0.5),
        AbsorptionFeature(1135.0, 25.0, 0.5),
        AbsorptionFeature(1380.0, 45.0, 4.0),
        AbsorptionFeature(1880.0, 55.0, 4.0),
        AbsorptionFeature(2010.0, 15.0, 0.3),
    ]


@dataclass
class SynthConfig:
    """
    Synthetic corpus parameters.

    Attributes:
        n_scenes (int): scenes to generate
        lines, samples (int): raster size per scene
        grid (str): "emit" or "aviris-ng"; ignored when ``wavelengths`` is set
        wavelengths (list): explicit band centers in nm
        cloud_fraction (float): probability a pixel is cloudy
        noise_level (float): Gaussian noise sigma in reflectance units
        trough_floor (float): reflectance of saturated absorption cores
        value_kind (str): "toa_reflectance" or "radiance"
        cap_per_class (int): sampling cap for the emitted dataset table
        validation_fraction (float): scene share of the validation table
        unlabeled_fraction (float): share of pixels left unlabeled (255)
    """
    n_scenes: int = 24
    lines: int = 16
    samples: int = 16
    grid: str = "emit"
    wavelengths: Optional[List[float]] = None
    cloud_fraction: float = 0.4
    noise_level: float = 0.005
    trough_floor: float = 0.0
    value_kind: str = "toa_reflectance"
    cap_per_class: int = 40
    validation_fraction: float = 0.25
    unlabeled_fraction: float = 0.0
    surface_albedo: Tuple[float, float] = (0.05, 0.45)
    surface_slope: Tuple[float, float] = (-0.15, 0.2)
    cloud_brightness: Tuple[float, float] = (0.45, 0.9)
    cloud_opacity: Tuple[float, float] = (0.15, 1.0)
    cloud_trough_fill: float = 0.5
    solar_zenith: float = 0.6
    earth_sun_distance: float = 1.0
    features: List[AbsorptionFeature] = field(default_factory=_default_features)

    def __post_init__(self):
        self.features = [f if isinstance(f, AbsorptionFeature) else AbsorptionFeature(**f)
                         for f in self.features]
        for name in ("surface_albedo", "surface_slope", "cloud_brightness", "cloud_opacity"):
            low, high = getattr(self, name)
            if low > high:
                raise ConfigError(f"{name}: range ({low}, {high}) is reversed")
            setattr(self, name, (float(low), float(high)))
        if self.n_scenes < 1 or self.lines < 1 or self.samples < 1:
            raise ConfigError("n_scenes, lines and samples must be positive")
        if not 0.0 <= self.cloud_fraction <= 1.0:
            raise ConfigError(f"cloud_fraction {self.cloud_fraction} outside [0, 1]")
        if not 0.0 <= self.unlabeled_fraction < 1.0:
            raise ConfigError(f"unlabeled_fraction {self.unlabeled_fraction} outside [0, 1)")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be non-negative")
        if self.value_kind not in (ValueKind.TOA_REFLECTANCE.value, ValueKind.RADIANCE.value):
            raise ConfigError(f"unknown value_kind '{self.value_kind}'")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str) -> "SynthConfig":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def band_grid(self) -> BandGrid:
        if self.wavelengths is not None:
            return BandGrid(self.wavelengths)
        if self.grid == "emit":
            return emit_like_grid()
        if self.grid == "aviris-ng":
            return aviris_ng_like_grid()
        raise ConfigError(f"unknown grid '{self.grid}'")


def absorption_profile(grid: BandGrid, features: List[AbsorptionFeature]) -> np.ndarray:
    """Fractional absorption per band in [0, 1]; 1 inside saturated cores."""
    total = np.zeros(grid.count)
    for feature in features:
        shape = np.exp(-0.5 * ((grid.wavelengths - feature.center) / feature.width) ** 2)
        total += np.minimum(1.0, feature.depth * shape)
    return np.clip(total, 0.0, 1.0)


def solar_irradiance(grid: BandGrid) -> np.ndarray:
    """Blackbody-shaped exo-atmospheric irradiance peaking at 2 W·m⁻²·nm⁻¹."""
    wavelength_m = grid.wavelengths * 1e-9
    hc_over_k = 1.438777e-2  # m·K
    planck = wavelength_m ** -5 / np.expm1(hc_over_k / (wavelength_m * SOLAR_TEMPERATURE_K))
    peak = (2.8977719e-3 / SOLAR_TEMPERATURE_K) ** -5 / np.expm1(hc_over_k / 2.8977719e-3)
    return SOLAR_PEAK_IRRADIANCE * planck / peak


def scene_id_for(index: int) -> str:
    return f"synth{index:04d}"


def synth_generate(config: SynthConfig, seed: int = 0) -> List[LabeledScene]:
    """
    Generate labeled scenes.

    Returns:
        One LabeledScene per configured scene, in TOA reflectance or (with
        ``value_kind="radiance"``) radiance with a geometry record
    """
    grid = config.band_grid()
    absorption = absorption_profile(grid, config.features)
    transmittance = 1.0 - absorption
    cloud_transmittance = 1.0 - config.cloud_trough_fill * absorption
    x = (grid.wavelengths - WAVELENGTH_CENTER) / WAVELENGTH_SCALE
    shape = (config.lines, config.samples)

    scenes = []
    for index in range(config.n_scenes):
        scene_id = scene_id_for(index)
        rng = derive_rng(seed, "synth", scene_id)

        albedo = rng.uniform(*config.surface_albedo, size=shape + (1,))
        slope = rng.uniform(*config.surface_slope, size=shape + (1,))
        continuum = np.maximum(albedo + slope * x, 0.01)
        clear = config.trough_floor + continuum * transmittance

        cloudy = rng.random(shape) < config.cloud_fraction
        opacity = rng.uniform(*config.cloud_opacity, size=shape + (1,))
        brightness = rng.uniform(*config.cloud_brightness, size=shape + (1,))
        cloud_layer = brightness * (1.0 - 0.1 * x) * cloud_transmittance
        with_cloud = (1.0 - opacity) * clear + opacity * cloud_layer

        reflectance = np.where(cloudy[..., None], with_cloud, clear)
        if config.noise_level > 0:
            reflectance = reflectance + rng.normal(0.0, config.noise_level, size=reflectance.shape)

        labels = cloudy.astype(np.uint8)
        if config.unlabeled_fraction > 0:
            labels[rng.random(shape) < config.unlabeled_fraction] = MASK_NO_DATA

        if config.value_kind == ValueKind.RADIANCE.value:
            geometry = GeometryRecord(config.solar_zenith, config.earth_sun_distance,
                                      solar_irradiance(grid))
            radiance = np.maximum(reflectance, 0.0) * geometry.solar_irradiance * geometry.cos_zenith \
                / (np.pi * geometry.earth_sun_distance ** 2)
            cube = SpectralCube(radiance, grid, ValueKind.RADIANCE, geometry)
        else:
            cube = SpectralCube(reflectance, grid, ValueKind.TOA_REFLECTANCE)

        scenes.append(LabeledScene(scene_id, cube, labels))
        logger.debug("generated %s: %d cloud pixels of %d", scene_id,
                     int(np.sum(labels == CloudLabel.CLOUD)), labels.size)

    logger.info("generated %d synthetic scenes on a %d-band grid", len(scenes), grid.count)
    return scenes


def write_synthetic_corpus(scenes: List[LabeledScene], config: SynthConfig, out_dir: str,
                           seed: int = 0) -> Dict[str, str]:
    """
    Write cubes, label rasters and dataset tables to ``out_dir``.

    Returns:
        dict with the paths of the written ``dataset``, ``train`` and
        ``validation`` tables
    """
    os.makedirs(out_dir, exist_ok=True)
    for scene in scenes:
        write_cube(scene.cube, os.path.join(out_dir, f"{scene.scene_id}.img"))
        write_mask(scene.labels, os.path.join(out_dir, f"{scene.scene_id}_labels.img"),
                   value_kind=ValueKind.LABELS)

    dataset = sample_dataset(scenes, config.cap_per_class, seed)
    paths = {"dataset": os.path.join(out_dir, "dataset.csv")}
    write_dataset_table(dataset, paths["dataset"])
    if len(scenes) >= 2:
        train, validation = split_by_scene(dataset, config.validation_fraction, seed)
        paths["train"] = os.path.join(out_dir, "train.csv")
        paths["validation"] = os.path.join(out_dir, "validation.csv")
        write_dataset_table(train, paths["train"])
        write_dataset_table(validation, paths["validation"])
    with open(os.path.join(out_dir, "synth_config.json"), "w", encoding="utf-8") as handle:
        json.dump(dict(config.to_dict(), seed=seed), handle, indent=2)
    logger.info("wrote synthetic corpus to %s", out_dir)
    return paths
