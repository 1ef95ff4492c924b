#!/usr/bin/env python3
"""
SpecTf Cloud Screening - Constants
==================================

Central constants and enumerations for the cloud screening pipeline.
Contains the fixed numbers the architecture, file formats and the
reference baseline depend on, so no call site hard-codes them.
"""

from enum import Enum, IntEnum
from typing import Dict, List, Tuple

# =============================================================================
# PACKAGE
# =============================================================================

PACKAGE_NAME = "spectf-cloud"
PACKAGE_VERSION = "0.3.0"

# =============================================================================
# CLASSES
# =============================================================================

class CloudLabel(IntEnum):
    """Pixel classes, in the fixed output order (clear, cloud)"""
    CLEAR = 0
    CLOUD = 1

CLASS_NAMES: Dict[CloudLabel, str] = {
    CloudLabel.CLEAR: "clear",
    CloudLabel.CLOUD: "cloud",
}

# Annotation classes folded into the two-class vocabulary
LABEL_ALIASES: Dict[str, CloudLabel] = {
    "clear": CloudLabel.CLEAR,
    "cloud_shadow": CloudLabel.CLEAR,
    "cloud": CloudLabel.CLOUD,
    "cirrus": CloudLabel.CLOUD,
}

# Raster values for masks and label rasters
MASK_CLEAR = 0
MASK_CLOUD = 1
MASK_NO_DATA = 255

# =============================================================================
# RUN MODES
# =============================================================================

class RunMode(Enum):
    """Forward-pass modes; dropout is only active in TRAIN"""
    TRAIN = "train"
    INFER = "infer"

class Architecture(Enum):
    """Architectures a model file can carry"""
    SPECTF = "spectf"
    ANN = "ann"

# =============================================================================
# WAVELENGTHS
# =============================================================================

WAVELENGTH_CENTER = 1440.0
WAVELENGTH_SCALE = 600.0
WAVELENGTH_MIN = 300.0
WAVELENGTH_MAX = 3000.0

# Closed intervals in nm dropped before training and prediction
EMIT_EXCLUSION_WINDOWS: List[Tuple[float, float]] = [
    (380.0, 400.0),
    (1275.0, 1320.0),
    (2450.0, 2500.0),
]

# Uniform approximations of the two instrument grids
EMIT_GRID_START = 381.2
EMIT_GRID_STEP = 7.45
EMIT_GRID_BANDS = 285
AVIRIS_NG_GRID_START = 377.0
AVIRIS_NG_GRID_STEP = 5.0
AVIRIS_NG_GRID_BANDS = 425

# =============================================================================
# NUMERICS
# =============================================================================

LAYER_NORM_EPS = 1e-5
PROBABILITY_FLOOR = 1e-12
GELU_COEFFICIENT = 0.044715

# =============================================================================
# L2A BASELINE THRESHOLDS (TOA reflectance)
# =============================================================================

BASELINE_T450 = 0.28
BASELINE_T1250 = 0.46
BASELINE_T1650 = 0.22
BASELINE_T1380 = 0.1

# =============================================================================
# SAMPLING
# =============================================================================

DEFAULT_SAMPLING_CAP = 10_000

# =============================================================================
# FILE FORMATS
# =============================================================================

class Interleave(Enum):
    """Raster payload layouts"""
    BSQ = "bsq"
    BIL = "bil"
    BIP = "bip"

class ValueKind(Enum):
    """What the values of a raster mean"""
    RADIANCE = "radiance"
    TOA_REFLECTANCE = "toa_reflectance"
    CLOUD_PROBABILITY = "cloud_probability"
    CLOUD_MASK = "cloud_mask"
    LABELS = "labels"

SPECTRAL_KINDS = {ValueKind.RADIANCE, ValueKind.TOA_REFLECTANCE}

HEADER_MAGIC = "SPECTF"
HEADER_EXTENSION = ".hdr"
CUBE_FORMAT_VERSION = 1
MODEL_FORMAT_VERSION = 1
MODEL_MAGIC = b"SPECTFM1"

# Metric rows in report order
REPORT_ROWS = [
    "TPR",
    "FPR",
    "ROC AUC",
    "F1.0",
    "F0.5",
    "F0.25",
    "F0.1",
    "Binary Thresh.",
    "Learned Params.",
]
REPORT_BETAS = [1.0, 0.5, 0.25, 0.1]

# =============================================================================
# ERRORS AND EXIT CODES
# =============================================================================

class ExitCode(IntEnum):
    """Machine-checkable CLI exit codes"""
    SUCCESS = 0
    USAGE = 1
    DATA = 2
    NUMERIC = 3

class ErrorType(Enum):
    """Error categories raised by the library"""
    DIMENSION = "dimension"
    NUMERIC_INPUT = "numeric_input"
    CONTRACT = "contract"
    CONFIG = "config"
    DEGENERATE_NORMALIZATION = "degenerate_normalization"
    NIGHT_SCENE = "night_scene"
    EMPTY_SPECTRUM = "empty_spectrum"
    OUT_OF_SPAN = "out_of_span"
    UNDEFINED_METRIC = "undefined_metric"
    FORMAT = "format"
    CHECKSUM = "checksum"
    VERSION = "version"
    DIVERGED = "diverged"

NUMERIC_ERRORS = {
    ErrorType.NUMERIC_INPUT,
    ErrorType.DIVERGED,
}
