"""
SpecTf Cloud Screening - Errors

Every failure the library raises derives from SpecTfError and knows its
category and the CLI exit code it maps to. Only app.main translates them.
"""

from typing import Dict, Optional

import numpy as np

from constants import ErrorType, ExitCode, NUMERIC_ERRORS


class SpecTfError(Exception):
    """Base class for all pipeline errors."""

    error_type: ErrorType = ErrorType.CONTRACT

    @property
    def exit_code(self) -> ExitCode:
        if self.error_type in NUMERIC_ERRORS:
            return ExitCode.NUMERIC
        return ExitCode.DATA


class DimensionError(SpecTfError):
    error_type = ErrorType.DIMENSION


class NumericInputError(SpecTfError):
    error_type = ErrorType.NUMERIC_INPUT


class ContractError(SpecTfError):
    error_type = ErrorType.CONTRACT


class ConfigError(SpecTfError):
    error_type = ErrorType.CONFIG


class DegenerateNormalizationError(SpecTfError):
    error_type = ErrorType.DEGENERATE_NORMALIZATION


class NightSceneError(SpecTfError):
    error_type = ErrorType.NIGHT_SCENE


class EmptySpectrumError(SpecTfError):
    error_type = ErrorType.EMPTY_SPECTRUM


class OutOfSpanError(SpecTfError):
    error_type = ErrorType.OUT_OF_SPAN


class UndefinedMetricError(SpecTfError):
    error_type = ErrorType.UNDEFINED_METRIC


class FormatError(SpecTfError):
    error_type = ErrorType.FORMAT


class ChecksumError(SpecTfError):
    error_type = ErrorType.CHECKSUM


class VersionError(SpecTfError):
    error_type = ErrorType.VERSION


class TrainingDivergedError(SpecTfError):
    """
    Raised when the training loss or a gradient stops being finite.

    Attributes:
        checkpoint (dict): parameter snapshot of the last good epoch (or the
            initial parameters when the first epoch diverged)
        epoch (int): epoch in which divergence was detected
    """

    error_type = ErrorType.DIVERGED

    def __init__(self, message: str, checkpoint: Optional[Dict[str, np.ndarray]] = None,
                 epoch: int = 0):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch
