"""
SpecTf Cloud Screening - Batch Inference

This module turns a spectral cube into a per-pixel cloud probability raster
and a binary cloud mask. Valid pixels are split into fixed-size chunks that
a worker pool scores independently; results are written back by chunk
index, so the output never depends on the number of workers or on the order
in which chunks finish.

Key Features:
- Radiance cubes converted to TOA reflectance before scoring
- The model's own band exclusion windows applied to the cube
- Pixels with any non-finite band reported as no-data (255)
- Mask rule p_cloud ≥ threshold, with the threshold taken from the model
  when the caller gives none
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import get_config
from constants import CloudLabel, MASK_CLEAR, MASK_CLOUD, MASK_NO_DATA
from errors import ConfigError, ContractError
from models import BaseClassifier, LabeledDataset, SpectralCube
from reference_models import BaselineThresholds, baseline_scores
from spectra import band_mask, cube_reflectance

logger = logging.getLogger(__name__)


@dataclass
class PredictionResult:
    """
    Outputs of one cube prediction.

    Attributes:
        probability (np.ndarray): lines × samples p_cloud, NaN for no-data
        mask (np.ndarray): lines × samples uint8, 0 clear, 1 cloud, 255 no-data
        threshold (float): decision threshold the mask was built with
    """
    probability: np.ndarray
    mask: np.ndarray
    threshold: float

    @property
    def counts(self) -> Dict[str, int]:
        return {
            "clear": int(np.sum(self.mask == MASK_CLEAR)),
            "cloud": int(np.sum(self.mask == MASK_CLOUD)),
            "no_data": int(np.sum(self.mask == MASK_NO_DATA)),
        }

    @property
    def cloud_fraction(self) -> float:
        counts = self.counts
        labeled = counts["clear"] + counts["cloud"]
        return counts["cloud"] / labeled if labeled else 0.0


def chunk_bounds(total: int, chunk: int) -> List[Tuple[int, int]]:
    """[start, stop) ranges of at most ``chunk`` items covering ``total``."""
    if chunk < 1:
        raise ConfigError(f"chunk size must be at least 1, got {chunk}")
    return [(start, min(start + chunk, total)) for start in range(0, total, chunk)]


def resolve_threshold(model: BaseClassifier, threshold: Optional[float]) -> float:
    """The explicit threshold, else the one stored with the model."""
    if threshold is None:
        threshold = model.threshold
    if threshold is None:
        raise ConfigError("no decision threshold given and the model file stores none")
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold {threshold} outside [0, 1]")
    return float(threshold)


def prepare_cube(model: BaseClassifier, cube: SpectralCube) -> SpectralCube:
    """Reflectance cube restricted to the bands the model was trained with."""
    reflectance = cube_reflectance(cube)
    reduced, _ = band_mask(reflectance, windows=model.exclusion_windows)
    return reduced


def predict_cube(model: BaseClassifier, cube: SpectralCube, threshold: Optional[float] = None,
                 workers: Optional[int] = None,
                 chunk_pixels: Optional[int] = None) -> PredictionResult:
    """
    Score every pixel of a cube.

    Args:
        model: trained classifier
        cube: radiance (with geometry) or TOA reflectance cube
        threshold: decision threshold; defaults to the model's stored one
        workers: pool size (``SPECTF_WORKERS`` when omitted)
        chunk_pixels: pixels per work unit (``SPECTF_CHUNK_PIXELS`` when omitted)

    Returns:
        PredictionResult, identical for every ``workers`` value
    """
    config = get_config()
    workers = workers or config.WORKERS
    chunk_pixels = chunk_pixels or config.CHUNK_PIXELS
    if workers < 1:
        raise ConfigError(f"worker count must be at least 1, got {workers}")
    threshold = resolve_threshold(model, threshold)

    started = time.perf_counter()
    prepared = prepare_cube(model, cube)
    pixels = prepared.pixels()
    valid = np.all(np.isfinite(pixels), axis=1)
    valid_index = np.flatnonzero(valid)
    wavelengths = prepared.grid.wavelengths

    def score(bounds: Tuple[int, int]) -> np.ndarray:
        start, stop = bounds
        chunk = pixels[valid_index[start:stop]]
        return model.predict_batch(chunk, wavelengths).data[:, CloudLabel.CLOUD]

    bounds = chunk_bounds(valid_index.size, chunk_pixels)
    if workers == 1 or len(bounds) <= 1:
        scores = [score(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # map yields in submission order
            scores = list(pool.map(score, bounds))

    flat_probability = np.full(pixels.shape[0], np.nan)
    if scores:
        flat_probability[valid_index] = np.concatenate(scores)
    flat_mask = np.full(pixels.shape[0], MASK_NO_DATA, dtype=np.uint8)
    flat_mask[valid] = np.where(flat_probability[valid] >= threshold, MASK_CLOUD, MASK_CLEAR)

    shape = (cube.lines, cube.samples)
    result = PredictionResult(flat_probability.reshape(shape), flat_mask.reshape(shape), threshold)
    counts = result.counts
    logger.info("predicted %d x %d pixels with %d worker(s) in %.2f s: %d cloud, %d clear, "
                "%d no-data (threshold %.4f)", cube.lines, cube.samples, workers,
                time.perf_counter() - started, counts["cloud"], counts["clear"],
                counts["no_data"], threshold)
    return result


def score_dataset(model: BaseClassifier, dataset: LabeledDataset) -> np.ndarray:
    """p_cloud of every record, after the model's exclusion windows."""
    if len(dataset) == 0:
        raise ContractError("cannot score an empty dataset")
    reduced, grid = band_mask(dataset, windows=model.exclusion_windows)
    return model.predict_proba(reduced.values, grid.wavelengths)[:, CloudLabel.CLOUD]


def baseline_cube_mask(cube: SpectralCube,
                       thresholds: Optional[BaselineThresholds] = None) -> np.ndarray:
    """Band-threshold mask of a cube on its full grid; 255 where any band is non-finite."""
    reflectance = cube_reflectance(cube)
    pixels = reflectance.pixels()
    valid = np.all(np.isfinite(pixels), axis=1)
    flat_mask = np.full(pixels.shape[0], MASK_NO_DATA, dtype=np.uint8)
    if valid.any():
        flat_mask[valid] = baseline_scores(pixels[valid], reflectance.grid, thresholds).astype(np.uint8)
    logger.info("baseline screen flagged %d of %d valid pixels as cloud",
                int(np.sum(flat_mask == MASK_CLOUD)), int(valid.sum()))
    return flat_mask.reshape(cube.lines, cube.samples)
