"""
SpecTf Cloud Screening - Spectral Data Operations

This module turns raw cubes into training records: TOA reflectance
conversion, band masking, wavelength normalization, per-scene class-capped
sampling and scene-disjoint splitting, plus the reference band grids and
the resampling used for cross-grid experiments.

Key Features:
- TOA reflectance ρ = π·L·d² / (E₀·cos θs) with a caller-supplied E₀
- Closed exclusion windows matched on band centers only
- Reproducible sampling: one PCG64 stream per (seed, scene, class)
- Splits at whole-scene granularity only
"""

import hashlib
import logging
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from constants import (
    AVIRIS_NG_GRID_BANDS, AVIRIS_NG_GRID_START, AVIRIS_NG_GRID_STEP,
    CLASS_NAMES, CloudLabel, DEFAULT_SAMPLING_CAP,
    EMIT_EXCLUSION_WINDOWS, EMIT_GRID_BANDS, EMIT_GRID_START, EMIT_GRID_STEP,
    ValueKind, WAVELENGTH_CENTER, WAVELENGTH_SCALE
)
from errors import ContractError, DimensionError, EmptySpectrumError, NightSceneError
from models import (
    BandGrid, GeometryRecord, LabeledDataset, LabeledScene, SpectralCube, Spectrum
)

logger = logging.getLogger(__name__)

Window = Tuple[float, float]
_UINT64_MASK = (1 << 64) - 1


# =============================================================================
# SEEDED STREAMS
# =============================================================================

def stable_hash(*keys) -> int:
    """64-bit hash of the keys' text form, identical across processes and platforms."""
    text = "\x1f".join(str(key) for key in keys).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """
    PCG64 stream for ``seed`` xor the stable hash of ``keys``.

    Sampling uses keys (scene id, class name); training uses
    ("shuffle", epoch) and ("dropout", epoch).
    """
    return np.random.default_rng((int(seed) ^ stable_hash(*keys)) & _UINT64_MASK)


# =============================================================================
# GRIDS
# =============================================================================

def emit_like_grid() -> BandGrid:
    """285 bands at 7.45 nm from 381.2 nm; the default windows leave 268."""
    return BandGrid(EMIT_GRID_START + EMIT_GRID_STEP * np.arange(EMIT_GRID_BANDS))


def aviris_ng_like_grid() -> BandGrid:
    """425 bands at 5 nm from 377 nm."""
    return BandGrid(AVIRIS_NG_GRID_START + AVIRIS_NG_GRID_STEP * np.arange(AVIRIS_NG_GRID_BANDS))


def normalize_wavelengths(grid: BandGrid, center: float = WAVELENGTH_CENTER,
                          scale: float = WAVELENGTH_SCALE) -> np.ndarray:
    """b' = (b − center) / scale, with center 1440 nm and scale 600 nm by default."""
    return grid.normalized(center, scale)


def resample_spectrum(values: np.ndarray, source: BandGrid, target: BandGrid) -> np.ndarray:
    """
    Linearly interpolate spectra (1D or N × n) onto another grid.

    Target bands outside the source span take the nearest edge value.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != source.count:
        raise DimensionError(
            f"spectra have {values.shape[-1]} bands, source grid has {source.count}")
    if values.ndim == 1:
        return np.interp(target.wavelengths, source.wavelengths, values)
    return np.stack([np.interp(target.wavelengths, source.wavelengths, row)
                     for row in values.reshape(-1, source.count)]).reshape(
        values.shape[:-1] + (target.count,))


# =============================================================================
# RADIOMETRY
# =============================================================================

def toa_reflectance(radiance: Union[Spectrum, np.ndarray],
                    geometry: GeometryRecord) -> Union[Spectrum, np.ndarray]:
    """
    Convert at-sensor radiance to TOA reflectance.

    Args:
        radiance: a Spectrum or an array whose last axis is bands
            (W·m⁻²·sr⁻¹·nm⁻¹)
        geometry: solar zenith, Earth-Sun distance and E₀ per band

    Returns:
        Same kind as ``radiance``: ρ = π·L·d² / (E₀·cos θs)

    Raises:
        NightSceneError: if cos θs ≤ 0
        ContractError: if any radiance value is negative
    """
    cos_zenith = geometry.cos_zenith
    if cos_zenith <= 0:
        raise NightSceneError(
            f"solar zenith {geometry.solar_zenith:.4f} rad puts the sun below the horizon")
    values = radiance.values if isinstance(radiance, Spectrum) else np.asarray(radiance, dtype=np.float64)
    if values.shape[-1] != geometry.solar_irradiance.size:
        raise DimensionError(
            f"radiance has {values.shape[-1]} bands, irradiance has "
            f"{geometry.solar_irradiance.size}")
    if np.any(values < 0):
        raise ContractError("radiance must be non-negative")
    reflectance = (np.pi * values * geometry.earth_sun_distance ** 2
                   / (geometry.solar_irradiance * cos_zenith))
    if isinstance(radiance, Spectrum):
        return Spectrum(reflectance, radiance.grid)
    return reflectance


def cube_reflectance(cube: SpectralCube) -> SpectralCube:
    """Return the cube in TOA reflectance, converting radiance cubes."""
    if cube.value_kind is ValueKind.TOA_REFLECTANCE:
        return cube
    if cube.value_kind is not ValueKind.RADIANCE:
        raise ContractError(f"cannot convert a '{cube.value_kind.value}' raster to reflectance")
    if cube.geometry is None:
        raise ContractError("radiance cube has no geometry record; cannot compute reflectance")
    # no-data pixels stay NaN
    finite = np.isfinite(cube.values)
    values = np.where(finite, cube.values, 0.0)
    reflectance = toa_reflectance(values, cube.geometry)
    reflectance[~finite] = np.nan
    return SpectralCube(reflectance, cube.grid, ValueKind.TOA_REFLECTANCE, cube.geometry)


# =============================================================================
# BAND MASKING
# =============================================================================

def band_keep_mask(grid: BandGrid, windows: Sequence[Window]) -> np.ndarray:
    """True for bands whose center is outside every closed window."""
    keep = np.ones(grid.count, dtype=bool)
    for low, high in windows:
        if low > high:
            raise ContractError(f"exclusion window [{low}, {high}] is reversed")
        keep &= ~((grid.wavelengths >= low) & (grid.wavelengths <= high))
    return keep


def band_mask(data, grid: Optional[BandGrid] = None,
              windows: Sequence[Window] = EMIT_EXCLUSION_WINDOWS):
    """
    Remove bands whose centers fall inside any exclusion window.

    Args:
        data: Spectrum, SpectralCube, LabeledDataset, or an array whose last
            axis is bands (then ``grid`` is required)
        grid: grid of ``data``; taken from ``data`` when it carries one
        windows: closed [low, high] intervals in nm

    Returns:
        (reduced data of the same kind, reduced BandGrid); band order is kept

    Raises:
        EmptySpectrumError: if every band is removed
    """
    own_grid = getattr(data, "grid", None)
    if grid is None:
        grid = own_grid
    if grid is None:
        raise ContractError("band_mask needs the grid of a bare array")
    if own_grid is not None and own_grid != grid:
        raise ContractError("band_mask grid differs from the data's own grid")

    keep = band_keep_mask(grid, windows)
    if not keep.any():
        raise EmptySpectrumError("every band falls inside an exclusion window")
    reduced = BandGrid(grid.wavelengths[keep])
    logger.debug("band mask kept %d of %d bands", reduced.count, grid.count)

    if isinstance(data, Spectrum):
        return Spectrum(data.values[keep], reduced), reduced
    if isinstance(data, SpectralCube):
        geometry = data.geometry
        if geometry is not None:
            geometry = GeometryRecord(geometry.solar_zenith, geometry.earth_sun_distance,
                                      geometry.solar_irradiance[keep])
        return SpectralCube(data.values[..., keep], reduced, data.value_kind, geometry), reduced
    if isinstance(data, LabeledDataset):
        return LabeledDataset(data.values[:, keep], data.labels, data.scene_ids, reduced,
                              data.pixel_index), reduced
    values = np.asarray(data, dtype=np.float64)
    if values.shape[-1] != grid.count:
        raise DimensionError(f"array has {values.shape[-1]} bands, grid has {grid.count}")
    return values[..., keep], reduced


# =============================================================================
# SAMPLING AND SPLITTING
# =============================================================================

def sample_dataset(scenes: Iterable[LabeledScene], cap: int = DEFAULT_SAMPLING_CAP,
                   seed: int = 0) -> LabeledDataset:
    """
    Sample up to ``cap`` pixels of each class from each scene.

    Sampling is uniform without replacement, drawn from a stream derived from
    (seed, scene id, class), so each scene's draw is independent of the
    others. Unlabeled pixels (255) are never sampled and a scene without
    labeled pixels contributes nothing.

    Raises:
        ContractError: if cap < 1 or the scenes do not share one band grid
    """
    if cap < 1:
        raise ContractError(f"sampling cap must be at least 1, got {cap}")

    values: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    scene_ids: List[np.ndarray] = []
    pixel_index: List[np.ndarray] = []
    grid: Optional[BandGrid] = None

    for scene in scenes:
        cube = cube_reflectance(scene.cube)
        if grid is None:
            grid = cube.grid
        elif cube.grid != grid:
            raise ContractError(f"scene '{scene.scene_id}' uses a different band grid")
        flat_labels = scene.labels.reshape(-1)
        pixels = cube.pixels()
        for label in CloudLabel:
            candidates = np.flatnonzero(flat_labels == int(label))
            if candidates.size == 0:
                continue
            if candidates.size > cap:
                rng = derive_rng(seed, scene.scene_id, CLASS_NAMES[label])
                candidates = np.sort(rng.choice(candidates, size=cap, replace=False))
            values.append(pixels[candidates])
            labels.append(np.full(candidates.size, int(label)))
            scene_ids.append(np.full(candidates.size, scene.scene_id, dtype=object))
            pixel_index.append(np.stack(np.unravel_index(candidates, scene.labels.shape), axis=1))
        logger.debug("sampled scene %s", scene.scene_id)

    if grid is None:
        raise ContractError("no scenes to sample from")
    if not values:
        return LabeledDataset(np.zeros((0, grid.count)), np.zeros(0), np.zeros(0, dtype=object),
                              grid, np.zeros((0, 2)))
    dataset = LabeledDataset(np.concatenate(values), np.concatenate(labels),
                             np.concatenate(scene_ids), grid, np.concatenate(pixel_index))
    logger.info("sampled %d records from %d scenes: %s", len(dataset), len(dataset.scenes),
                dataset.class_counts())
    return dataset


def split_by_scene(dataset: LabeledDataset, validation_fraction: float,
                   seed: int = 0) -> Tuple[LabeledDataset, LabeledDataset]:
    """
    Partition the records by scene id into (train, validation).

    round(fraction × scenes) scenes go to validation, clipped so each side
    keeps at least one scene.

    Raises:
        ContractError: if the fraction is outside (0, 1) or there are fewer
            than two scenes
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ContractError(f"validation fraction must be in (0, 1), got {validation_fraction}")
    scenes = dataset.scenes
    if len(scenes) < 2:
        raise ContractError(f"a scene split needs at least 2 scenes, got {len(scenes)}")

    order = derive_rng(seed, "split").permutation(len(scenes))
    n_validation = int(round(validation_fraction * len(scenes)))
    n_validation = min(max(n_validation, 1), len(scenes) - 1)
    validation_scenes = {scenes[i] for i in order[:n_validation]}

    in_validation = np.array([sid in validation_scenes for sid in dataset.scene_ids], dtype=bool)
    train, validation = dataset.subset(~in_validation), dataset.subset(in_validation)
    logger.info("scene split: %d train scenes / %d validation scenes",
                len(scenes) - n_validation, n_validation)
    return train, validation
