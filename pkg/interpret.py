"""
SpecTf Cloud Screening - Attention Interpretation

Per-wavelength attention spectra read straight from the attention layer.
For each head the post-softmax weight matrix is summed over queries, giving
how much attention each wavelength's key received; heads are then averaged
with equal weight. Each query row sums to 1, so a spectrum of n bands always
has an attention spectrum summing to n.

The spectra say where the model looked, not in which direction a band
pushed the decision.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import pandas as pd

from constants import CLASS_NAMES, CloudLabel, RunMode
from errors import ContractError, DimensionError
from models import LabeledDataset, Spectrum
from spectf import AttentionRecord, SpecTfModel, forward, forward_batch

logger = logging.getLogger(__name__)

HEAD_RULE = "mean"
NORMALIZATION = "post_softmax_column_sum"


@dataclass
class AttentionSpectrum:
    """
    Attention received per wavelength.

    Attributes:
        wavelengths (np.ndarray): band centers in nm
        values (np.ndarray): non-negative attention per band
        head_rule (str): how heads were combined
        normalization (str): which weights were summed
        records (int): number of spectra averaged into ``values``
    """
    wavelengths: np.ndarray
    values: np.ndarray
    head_rule: str = HEAD_RULE
    normalization: str = NORMALIZATION
    records: int = 1

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.wavelengths.size != self.values.size:
            raise DimensionError(f"{self.values.size} attention values for "
                                 f"{self.wavelengths.size} wavelengths")

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def peak_wavelength(self) -> float:
        return float(self.wavelengths[int(np.argmax(self.values))])


def spectrum_from_weights(weights: np.ndarray) -> np.ndarray:
    """Column sums over queries, averaged over heads: (heads, n, n) → (n,)"""
    return weights.sum(axis=-2).mean(axis=0)


def attention_from_record(record: AttentionRecord) -> AttentionSpectrum:
    return AttentionSpectrum(record.wavelengths, spectrum_from_weights(record.weights))


def attention_spectrum(model: SpecTfModel, spectrum: Spectrum) -> AttentionSpectrum:
    _, record = forward(model, spectrum, RunMode.INFER, return_attention=True)
    return attention_from_record(record)


def attention_batch(model: SpecTfModel, values: np.ndarray, wavelengths: np.ndarray,
                    batch_size: int = 64) -> np.ndarray:
    """Attention spectra of N spectra sharing one grid, as an N × n array."""
    values = np.asarray(values, dtype=np.float64)
    rows = []
    for start in range(0, values.shape[0], batch_size):
        _, heads = forward_batch(model, values[start:start + batch_size], wavelengths,
                                 RunMode.INFER, return_attention=True)
        # heads × B × n × n → B × n
        stacked = np.stack([head["weights"] for head in heads])
        rows.append(stacked.sum(axis=-2).mean(axis=0))
    if not rows:
        return np.zeros((0, np.asarray(wavelengths).size))
    return np.concatenate(rows, axis=0)


def mean_attention(model: SpecTfModel, dataset: LabeledDataset,
                   label: CloudLabel) -> AttentionSpectrum:
    """
    Mean attention spectrum over every record of one class.

    Raises:
        ContractError: the dataset has no record of that class
    """
    label = CloudLabel(label)
    selected = dataset.values[dataset.labels == label]
    if selected.shape[0] == 0:
        raise ContractError(f"no '{CLASS_NAMES[label]}' records to average")
    spectra = attention_batch(model, selected, dataset.grid.wavelengths)
    logger.info("mean %s attention over %d records", CLASS_NAMES[label], selected.shape[0])
    return AttentionSpectrum(dataset.grid.wavelengths, spectra.mean(axis=0),
                             records=int(selected.shape[0]))


def mean_attention_by_class(model: SpecTfModel,
                            dataset: LabeledDataset) -> Dict[CloudLabel, AttentionSpectrum]:
    """Mean spectra for every class present in the dataset."""
    return {label: mean_attention(model, dataset, label)
            for label in CloudLabel if np.any(dataset.labels == label)}


def emit_attention_overlay(spectrum: Spectrum, attention: AttentionSpectrum, path: str) -> None:
    """Write (wavelength nm, reflectance, attention) rows for external plotting."""
    if len(attention) != len(spectrum) \
            or not np.array_equal(attention.wavelengths, spectrum.grid.wavelengths):
        raise ContractError("attention spectrum is not aligned with the reflectance spectrum")
    frame = pd.DataFrame({
        "wavelength_nm": spectrum.grid.wavelengths,
        "reflectance": spectrum.values,
        "attention": attention.values,
    })
    frame.to_csv(path, index=False, float_format="%.9g")


def read_attention_overlay(path: str) -> pd.DataFrame:
    return pd.read_csv(path)


def write_mean_attention(attention: AttentionSpectrum, path: str,
                         label: Optional[CloudLabel] = None) -> None:
    """Two-column (wavelength_nm, attention) table."""
    frame = pd.DataFrame({"wavelength_nm": attention.wavelengths, "attention": attention.values})
    frame.to_csv(path, index=False, float_format="%.9g")
    logger.debug("wrote %s mean attention (%d records) to %s",
                 CLASS_NAMES[label] if label is not None else "all", attention.records, path)
