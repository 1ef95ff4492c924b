"""
SpecTf Cloud Screening - File Formats

Readers and writers for every on-disk artifact:

- Rasters: raw little-endian payload plus a text sidecar header
  (``<stem>.hdr``). Spectral cubes are float32 in any interleave; masks and
  label rasters are uint8; probability maps are single-band float32.
- Dataset tables: CSV ``scene_id,label,<wavelength nm>...``.
- Score tables: CSV with a ``p_cloud`` column.
- Model files: magic, manifest length, JSON manifest, float32 payload.

Values are float64 in memory and 32-bit on disk; conversion happens here
and nowhere else. The header grammar is documented in docs/file_formats.md.
"""

import hashlib
import json
import logging
import os
import re
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from constants import (
    CLASS_NAMES, CUBE_FORMAT_VERSION, HEADER_EXTENSION, HEADER_MAGIC, Interleave,
    LABEL_ALIASES, MASK_CLEAR, MASK_CLOUD, MASK_NO_DATA, MODEL_FORMAT_VERSION,
    MODEL_MAGIC, SPECTRAL_KINDS, ValueKind
)
from errors import ChecksumError, ContractError, FormatError, VersionError
from models import BandGrid, GeometryRecord, LabeledDataset, SpectralCube

logger = logging.getLogger(__name__)

DATA_TYPES = {"float32": np.dtype("<f4"), "uint8": np.dtype("u1")}
FLOAT_FORMAT = "%.9g"
_KEY_PATTERN = re.compile(r"^([A-Za-z][A-Za-z ]*?)\s*=\s*(.*)$")
_LIST_KEYS = {"wavelength", "solar irradiance"}


# =============================================================================
# HEADERS
# =============================================================================

def header_path(path: str) -> str:
    """Sidecar header path: the data path with its extension replaced by .hdr."""
    return os.path.splitext(path)[0] + HEADER_EXTENSION


def parse_header(text: str) -> Dict[str, Union[str, List[str]]]:
    """
    Parse header text into raw ``key -> value`` strings.

    Brace values become lists of stripped items and may span lines. Keys
    are case-insensitive and internal whitespace is collapsed.

    Raises:
        FormatError: missing magic line, malformed line, unterminated brace
            list or duplicate key
    """
    lines = text.splitlines()
    while lines and not lines[0].strip():
        lines.pop(0)
    if not lines or lines[0].strip() != HEADER_MAGIC:
        raise FormatError(f"header must start with a '{HEADER_MAGIC}' line")

    fields: Dict[str, Union[str, List[str]]] = {}
    index = 1
    while index < len(lines):
        line = lines[index].strip()
        index += 1
        if not line or line.startswith("#"):
            continue
        match = _KEY_PATTERN.match(line)
        if match is None:
            raise FormatError(f"header line {index}: expected 'key = value', got '{line}'")
        key = " ".join(match.group(1).lower().split())
        value = match.group(2).strip()
        if value.startswith("{"):
            body = value[1:]
            while "}" not in body:
                if index >= len(lines):
                    raise FormatError(f"header key '{key}': unterminated brace list")
                body += " " + lines[index].strip()
                index += 1
            inner, _, trailing = body.partition("}")
            if trailing.strip():
                raise FormatError(f"header key '{key}': text after closing brace")
            parsed: Union[str, List[str]] = [item.strip() for item in inner.split(",") if item.strip()]
        else:
            parsed = value
        if key in fields:
            raise FormatError(f"header key '{key}' appears twice")
        fields[key] = parsed
    return fields


def format_header(fields: Mapping[str, object]) -> str:
    """Render header fields; lists are written in braces, eight items per line."""
    out = [HEADER_MAGIC]
    for key, value in fields.items():
        if value is None:
            continue
        if isinstance(value, (list, tuple, np.ndarray)):
            items = [f"{float(v):.9g}" for v in value]
            rows = [", ".join(items[i:i + 8]) for i in range(0, len(items), 8)]
            out.append(f"{key} = {{\n  " + ",\n  ".join(rows) + "\n}")
        elif isinstance(value, float):
            out.append(f"{key} = {value:.17g}")
        else:
            out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"


@dataclass
class RasterHeader:
    """
    Validated sidecar header.

    Attributes:
        lines, samples, bands (int): raster extents
        interleave (Interleave): payload layout
        data_type (str): "float32" or "uint8"
        value_kind (ValueKind): what the values mean
        wavelengths (list): band centers in nm; spectral kinds only
        solar_zenith, earth_sun_distance, solar_irradiance: optional geometry
        threshold (float): decision threshold a mask was produced with
        model_checksum (str): payload checksum of the producing model
    """
    lines: int
    samples: int
    bands: int
    value_kind: ValueKind
    interleave: Interleave = Interleave.BSQ
    data_type: str = "float32"
    byte_order: str = "little"
    format_version: int = CUBE_FORMAT_VERSION
    wavelengths: Optional[List[float]] = None
    solar_zenith: Optional[float] = None
    earth_sun_distance: Optional[float] = None
    solar_irradiance: Optional[List[float]] = None
    threshold: Optional[float] = None
    model_checksum: Optional[str] = None
    extra: Dict[str, object] = field(default_factory=dict)

    @property
    def dtype(self) -> np.dtype:
        return DATA_TYPES[self.data_type]

    @property
    def payload_bytes(self) -> int:
        return self.lines * self.samples * self.bands * self.dtype.itemsize

    def geometry(self) -> Optional[GeometryRecord]:
        if self.solar_zenith is None or self.earth_sun_distance is None \
                or self.solar_irradiance is None:
            return None
        return GeometryRecord(self.solar_zenith, self.earth_sun_distance,
                              np.asarray(self.solar_irradiance))

    def to_fields(self) -> "OrderedDict[str, object]":
        fields: "OrderedDict[str, object]" = OrderedDict()
        fields["format version"] = self.format_version
        fields["lines"] = self.lines
        fields["samples"] = self.samples
        fields["bands"] = self.bands
        fields["interleave"] = self.interleave.value
        fields["data type"] = self.data_type
        fields["byte order"] = self.byte_order
        fields["value kind"] = self.value_kind.value
        fields["wavelength"] = self.wavelengths
        fields["solar zenith"] = self.solar_zenith
        fields["earth sun distance"] = self.earth_sun_distance
        fields["solar irradiance"] = self.solar_irradiance
        fields["threshold"] = self.threshold
        fields["model checksum"] = self.model_checksum
        return fields

    @classmethod
    def from_fields(cls, fields: Mapping[str, Union[str, List[str]]]) -> "RasterHeader":
        """
        Validate parsed header fields.

        Raises:
            VersionError: unsupported format version
            FormatError: missing or malformed keys, unknown interleave, data
                type or value kind, or a wavelength list that does not match
                the band count
        """
        def scalar(key: str, required: bool = True) -> Optional[str]:
            value = fields.get(key)
            if value is None:
                if required:
                    raise FormatError(f"header is missing '{key}'")
                return None
            if isinstance(value, list):
                raise FormatError(f"header key '{key}' must be a single value")
            return value

        def number(key: str, kind=float, required: bool = True):
            text = scalar(key, required)
            if text is None:
                return None
            try:
                return kind(text)
            except ValueError as exc:
                raise FormatError(f"header key '{key}': '{text}' is not a valid {kind.__name__}") from exc

        def number_list(key: str) -> Optional[List[float]]:
            value = fields.get(key)
            if value is None:
                return None
            if not isinstance(value, list):
                raise FormatError(f"header key '{key}' must be a brace list")
            try:
                return [float(item) for item in value]
            except ValueError as exc:
                raise FormatError(f"header key '{key}': non-numeric list item") from exc

        version = number("format version", int)
        if version != CUBE_FORMAT_VERSION:
            raise VersionError(f"unsupported raster format version {version} "
                               f"(this build reads {CUBE_FORMAT_VERSION})")
        lines, samples, bands = number("lines", int), number("samples", int), number("bands", int)
        if min(lines, samples, bands) <= 0:
            raise FormatError("lines, samples and bands must be positive")
        try:
            interleave = Interleave(scalar("interleave").lower())
        except ValueError as exc:
            raise FormatError(f"unknown interleave '{fields.get('interleave')}'") from exc
        data_type = scalar("data type").lower()
        if data_type not in DATA_TYPES:
            raise FormatError(f"unknown data type '{data_type}'")
        byte_order = (scalar("byte order", required=False) or "little").lower()
        if byte_order != "little":
            raise FormatError(f"unsupported byte order '{byte_order}'")
        try:
            value_kind = ValueKind(scalar("value kind").lower())
        except ValueError as exc:
            raise FormatError(f"unknown value kind '{fields.get('value kind')}'") from exc

        wavelengths = number_list("wavelength")
        if value_kind in SPECTRAL_KINDS:
            if wavelengths is None:
                raise FormatError("spectral rasters need a wavelength list")
            if len(wavelengths) != bands:
                raise FormatError(f"header has bands = {bands} but {len(wavelengths)} wavelengths")
        irradiance = number_list("solar irradiance")
        if irradiance is not None and len(irradiance) != bands:
            raise FormatError(f"header has bands = {bands} but {len(irradiance)} irradiance values")

        known = {"format version", "lines", "samples", "bands", "interleave", "data type",
                 "byte order", "value kind", "wavelength", "solar zenith",
                 "earth sun distance", "solar irradiance", "threshold", "model checksum"}
        return cls(
            lines=lines, samples=samples, bands=bands, value_kind=value_kind,
            interleave=interleave, data_type=data_type, byte_order=byte_order,
            format_version=version, wavelengths=wavelengths,
            solar_zenith=number("solar zenith", required=False),
            earth_sun_distance=number("earth sun distance", required=False),
            solar_irradiance=irradiance,
            threshold=number("threshold", required=False),
            model_checksum=scalar("model checksum", required=False),
            extra={key: value for key, value in fields.items() if key not in known},
        )


def read_header(path: str) -> RasterHeader:
    with open(header_path(path), "r", encoding="utf-8") as handle:
        header = RasterHeader.from_fields(parse_header(handle.read()))
    logger.debug("read header for %s: %d x %d x %d %s %s", path, header.lines,
                 header.samples, header.bands, header.interleave.value, header.value_kind.value)
    return header


def write_header(header: RasterHeader, path: str) -> None:
    with open(header_path(path), "w", encoding="utf-8") as handle:
        handle.write(format_header(header.to_fields()))


# =============================================================================
# RASTERS
# =============================================================================

def _read_payload(path: str, header: RasterHeader) -> np.ndarray:
    """Read the payload and return it as (lines, samples, bands)."""
    size = os.path.getsize(path)
    if size != header.payload_bytes:
        raise FormatError(f"{path}: payload is {size} bytes, header implies {header.payload_bytes}")
    flat = np.fromfile(path, dtype=header.dtype)
    lines, samples, bands = header.lines, header.samples, header.bands
    if header.interleave is Interleave.BSQ:
        return flat.reshape(bands, lines, samples).transpose(1, 2, 0)
    if header.interleave is Interleave.BIL:
        return flat.reshape(lines, bands, samples).transpose(0, 2, 1)
    return flat.reshape(lines, samples, bands)


def _write_payload(values: np.ndarray, path: str, dtype: np.dtype,
                   interleave: Interleave) -> None:
    """Write a (lines, samples, bands) array in the requested layout."""
    if interleave is Interleave.BSQ:
        ordered = values.transpose(2, 0, 1)
    elif interleave is Interleave.BIL:
        ordered = values.transpose(0, 2, 1)
    else:
        ordered = values
    np.ascontiguousarray(ordered, dtype=dtype).tofile(path)


def read_cube(path: str) -> SpectralCube:
    """
    Read a spectral cube (radiance or TOA reflectance) in any interleave.

    Raises:
        FormatError: header problems, a payload size mismatch or a
            non-spectral raster
    """
    header = read_header(path)
    if header.value_kind not in SPECTRAL_KINDS:
        raise FormatError(f"{path}: '{header.value_kind.value}' raster is not a spectral cube")
    if header.data_type != "float32":
        raise FormatError(f"{path}: spectral cubes are float32, header says {header.data_type}")
    values = _read_payload(path, header).astype(np.float64)
    return SpectralCube(values, BandGrid(header.wavelengths), header.value_kind, header.geometry())


def write_cube(cube: SpectralCube, path: str, interleave: Interleave = Interleave.BSQ) -> None:
    """Write a cube as float32 little-endian with its sidecar header."""
    geometry = cube.geometry
    header = RasterHeader(
        lines=cube.lines, samples=cube.samples, bands=cube.bands,
        value_kind=cube.value_kind, interleave=Interleave(interleave),
        wavelengths=cube.grid.wavelengths.tolist(),
        solar_zenith=None if geometry is None else float(geometry.solar_zenith),
        earth_sun_distance=None if geometry is None else float(geometry.earth_sun_distance),
        solar_irradiance=None if geometry is None else geometry.solar_irradiance.tolist(),
    )
    _write_payload(cube.values, path, header.dtype, header.interleave)
    write_header(header, path)
    logger.debug("wrote cube %s (%d x %d x %d)", path, cube.lines, cube.samples, cube.bands)


def write_mask(mask: np.ndarray, path: str, threshold: Optional[float] = None,
               model_checksum: Optional[str] = None,
               value_kind: ValueKind = ValueKind.CLOUD_MASK) -> None:
    """
    Write a lines × samples uint8 raster (cloud mask or label raster).

    Raises:
        ContractError: values other than 0, 1 and 255
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ContractError(f"mask must be 2D, got shape {mask.shape}")
    if not np.all(np.isin(mask, [MASK_CLEAR, MASK_CLOUD, MASK_NO_DATA])):
        raise ContractError("mask values must be 0, 1 or 255")
    header = RasterHeader(lines=mask.shape[0], samples=mask.shape[1], bands=1,
                          value_kind=ValueKind(value_kind), data_type="uint8",
                          threshold=threshold, model_checksum=model_checksum)
    _write_payload(mask[..., None], path, header.dtype, header.interleave)
    write_header(header, path)


def read_mask(path: str) -> Tuple[np.ndarray, RasterHeader]:
    """Read a uint8 mask or label raster; returns (lines × samples array, header)."""
    header = read_header(path)
    if header.data_type != "uint8" or header.bands != 1:
        raise FormatError(f"{path}: masks are single-band uint8")
    mask = _read_payload(path, header)[..., 0].copy()
    if not np.all(np.isin(mask, [MASK_CLEAR, MASK_CLOUD, MASK_NO_DATA])):
        raise FormatError(f"{path}: mask values must be 0, 1 or 255")
    return mask, header


def write_probability(probability: np.ndarray, path: str,
                      model_checksum: Optional[str] = None) -> None:
    """Write a single-band float32 cloud-probability raster (NaN marks no-data)."""
    probability = np.asarray(probability, dtype=np.float64)
    header = RasterHeader(lines=probability.shape[0], samples=probability.shape[1], bands=1,
                          value_kind=ValueKind.CLOUD_PROBABILITY, model_checksum=model_checksum)
    _write_payload(probability[..., None], path, header.dtype, header.interleave)
    write_header(header, path)


def read_probability(path: str) -> Tuple[np.ndarray, RasterHeader]:
    header = read_header(path)
    if header.value_kind is not ValueKind.CLOUD_PROBABILITY or header.bands != 1:
        raise FormatError(f"{path}: not a single-band cloud-probability raster")
    return _read_payload(path, header)[..., 0].astype(np.float64), header


def raster_kind(path: str) -> Optional[ValueKind]:
    """Value kind of a raster with a readable sidecar header, else None."""
    if not os.path.exists(header_path(path)) or header_path(path) == path:
        return None
    try:
        return read_header(path).value_kind
    except FormatError:
        return None


# =============================================================================
# TABLES
# =============================================================================

def write_dataset_table(dataset: LabeledDataset, path: str) -> None:
    """CSV with ``scene_id,label`` then one reflectance column per wavelength."""
    columns = [f"{w:.9g}" for w in dataset.grid.wavelengths]
    frame = pd.DataFrame(dataset.values, columns=columns)
    frame.insert(0, "label", [CLASS_NAMES[label] for label in dataset.labels])
    frame.insert(0, "scene_id", dataset.scene_ids)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug("wrote %d records to %s", len(dataset), path)


def read_dataset_table(path: str) -> LabeledDataset:
    """
    Read a dataset table, folding annotation aliases into (clear, cloud).

    Raises:
        FormatError: bad header, unknown label, ragged or empty cells
    """
    try:
        frame = pd.read_csv(path, dtype={"scene_id": str, "label": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if list(frame.columns[:2]) != ["scene_id", "label"]:
        raise FormatError(f"{path}: header must start with 'scene_id,label'")
    try:
        wavelengths = [float(column) for column in frame.columns[2:]]
    except ValueError as exc:
        raise FormatError(f"{path}: wavelength header is not numeric") from exc
    if not wavelengths:
        raise FormatError(f"{path}: no reflectance columns")
    if frame.isna().to_numpy().any():
        raise FormatError(f"{path}: table has missing cells")

    labels = []
    for raw in frame["label"]:
        key = raw.strip().lower()
        if key not in LABEL_ALIASES:
            raise FormatError(f"{path}: unknown label '{raw}'")
        labels.append(int(LABEL_ALIASES[key]))
    return LabeledDataset(frame.iloc[:, 2:].to_numpy(dtype=np.float64), np.array(labels, dtype=np.int64),
                          frame["scene_id"].to_numpy(dtype=object), BandGrid(wavelengths))


def write_score_table(scores: np.ndarray, path: str) -> None:
    pd.DataFrame({"p_cloud": np.asarray(scores, dtype=np.float64)}).to_csv(
        path, index=False, float_format=FLOAT_FORMAT)


def read_score_table(path: str) -> np.ndarray:
    """Read the ``p_cloud`` column of an external score table."""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if "p_cloud" not in frame.columns:
        raise FormatError(f"{path}: score tables need a 'p_cloud' column")
    scores = pd.to_numeric(frame["p_cloud"], errors="coerce").to_numpy(dtype=np.float64)
    if np.any(~np.isfinite(scores)):
        raise FormatError(f"{path}: non-numeric or missing scores")
    return scores


def write_text_table(frame: pd.DataFrame, path: str) -> None:
    """Plain-text, whitespace-aligned table (training history, reports)."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(frame.to_string(index=False) + "\n")


def read_text_table(path: str) -> pd.DataFrame:
    return pd.read_csv(path, sep=r"\s+")


# =============================================================================
# MODEL FILES
# =============================================================================

_LENGTH = struct.Struct("<Q")


def payload_checksum(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def write_model_file(path: str, manifest: Mapping[str, object],
                     tensors: Mapping[str, np.ndarray]) -> str:
    """
    Write magic, manifest length, JSON manifest and float32 payload.

    The tensor directory (name, shape, offset, count) and the payload
    checksum are added to ``manifest`` here.

    Returns:
        str: SHA-256 hex digest of the payload
    """
    directory = []
    chunks = []
    offset = 0
    for name, array in tensors.items():
        data = np.ascontiguousarray(array, dtype="<f4")
        directory.append({"name": name, "shape": list(data.shape), "offset": offset,
                          "count": int(data.size)})
        chunks.append(data.tobytes())
        offset += int(data.size)
    payload = b"".join(chunks)
    checksum = payload_checksum(payload)

    full = dict(manifest)
    full["format_version"] = MODEL_FORMAT_VERSION
    full["tensors"] = directory
    full["payload_bytes"] = len(payload)
    full["payload_sha256"] = checksum
    encoded = json.dumps(full, sort_keys=True).encode("utf-8")

    with open(path, "wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(_LENGTH.pack(len(encoded)))
        handle.write(encoded)
        handle.write(payload)
    logger.debug("wrote model %s: %d tensors, sha256 %s", path, len(directory), checksum)
    return checksum


def read_model_file(path: str) -> Tuple[Dict, "OrderedDict[str, np.ndarray]"]:
    """
    Read a model file.

    Returns:
        (manifest dict, OrderedDict of float64 arrays in directory order)

    Raises:
        FormatError: wrong magic or malformed manifest
        ChecksumError: truncated file or payload checksum mismatch
        VersionError: unsupported format version
    """
    with open(path, "rb") as handle:
        blob = handle.read()
    prefix = len(MODEL_MAGIC) + _LENGTH.size
    if blob[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        if blob and len(blob) < len(MODEL_MAGIC) and MODEL_MAGIC.startswith(blob):
            raise ChecksumError(f"{path}: truncated model file")
        raise FormatError(f"{path}: not a model file")
    if len(blob) < prefix:
        raise ChecksumError(f"{path}: truncated model file")
    (length,) = _LENGTH.unpack(blob[len(MODEL_MAGIC):prefix])
    if len(blob) < prefix + length:
        raise ChecksumError(f"{path}: truncated model file (manifest incomplete)")
    try:
        manifest = json.loads(blob[prefix:prefix + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: manifest is not valid JSON") from exc

    version = manifest.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported model format version {version} "
                           f"(this build reads {MODEL_FORMAT_VERSION})")
    payload = blob[prefix + length:]
    if len(payload) != manifest.get("payload_bytes") \
            or payload_checksum(payload) != manifest.get("payload_sha256"):
        raise ChecksumError(f"{path}: payload checksum mismatch")

    values = np.frombuffer(payload, dtype="<f4")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        for entry in manifest["tensors"]:
            start, count = int(entry["offset"]), int(entry["count"])
            if entry["name"] in tensors or start + count > values.size:
                raise FormatError(f"{path}: bad tensor directory entry '{entry['name']}'")
            tensors[entry["name"]] = values[start:start + count].astype(np.float64).reshape(entry["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed tensor directory") from exc
    logger.debug("read model %s: format version %d, sha256 %s", path, version,
                 manifest["payload_sha256"])
    return manifest, tensors


def is_model_file(path: str) -> bool:
    try:
        with open(path, "rb") as handle:
            return handle.read(len(MODEL_MAGIC)) == MODEL_MAGIC
    except OSError:
        return False
