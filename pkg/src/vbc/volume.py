"""Voxel-grid data model, spacing-aware geometry, and the .vbc on-disk format.

A volume is an immutable dense grid over (z, y, x) with millimeter spacing.
HU grids hold 32-bit reals (Hounsfield units), label grids hold one region
code per voxel.  Files carry an 8-byte magic, a length-prefixed JSON header
and the raw little-endian payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

VOLUME_MAGIC = b"VBCVOL01"

NUM_CLASSES = 6
IGNORE_LABEL = 255


class BodyRegionLabel(IntEnum):
    """Semantic body regions; index 0 is background, excluded from dice loss."""

    BACKGROUND = 0
    MUSCLE = 1
    BONES = 2
    SUBCUTANEOUS_TISSUE = 3
    ABDOMINAL_CAVITY = 4
    THORACIC_CAVITY = 5


FOREGROUND_CLASSES = (
    BodyRegionLabel.MUSCLE,
    BodyRegionLabel.BONES,
    BodyRegionLabel.SUBCUTANEOUS_TISSUE,
    BodyRegionLabel.ABDOMINAL_CAVITY,
    BodyRegionLabel.THORACIC_CAVITY,
)

# column order used by all human-facing dice tables
REPORT_CLASS_ORDER = (
    BodyRegionLabel.ABDOMINAL_CAVITY,
    BodyRegionLabel.BONES,
    BodyRegionLabel.MUSCLE,
    BodyRegionLabel.SUBCUTANEOUS_TISSUE,
    BodyRegionLabel.THORACIC_CAVITY,
)


class VolumeFormatError(ValueError):
    """A .vbc file (or a grid headed for one) violates the format contract."""


@dataclass(frozen=True)
class Spacing:
    """Millimeters per voxel edge along z, y, x."""

    z_mm: float
    y_mm: float
    x_mm: float

    def __post_init__(self):
        for name in ("z_mm", "y_mm", "x_mm"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"spacing {name} must be positive and finite, got {v!r}")
            object.__setattr__(self, name, v)

    def as_list(self) -> list[float]:
        return [self.z_mm, self.y_mm, self.x_mm]


def voxel_volume_ml(spacing: Spacing) -> float:
    """Volume of a single voxel in milliliters (mm^3 / 1000)."""
    return spacing.z_mm * spacing.y_mm * spacing.x_mm / 1000.0


def _check_dims(data: np.ndarray):
    if data.ndim != 3:
        raise VolumeFormatError(f"volume payload must have 3 axes (z, y, x), got {data.ndim}")
    if min(data.shape) < 1:
        raise VolumeFormatError(f"volume dims must be positive, got {data.shape}")


@dataclass
class HUVolume:
    """Scalar grid in Hounsfield units, row-major z -> y -> x."""

    data: np.ndarray
    spacing: Spacing = field(default_factory=lambda: Spacing(5.0, 1.0, 1.0))

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        _check_dims(self.data)
        if not np.all(np.isfinite(self.data)):
            raise VolumeFormatError("HU values must all be finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class LabelVolume:
    """One BodyRegionLabel per voxel; 255 marks ignored (unannotated) voxels."""

    data: np.ndarray
    spacing: Spacing = field(default_factory=lambda: Spacing(5.0, 1.0, 1.0))

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        _check_dims(self.data)
        bad = ~((self.data < NUM_CLASSES) | (self.data == IGNORE_LABEL))
        if bad.any():
            offender = int(self.data[bad][0])
            raise VolumeFormatError(f"label value {offender} outside {{0..5, 255}}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class ProbabilityVolume:
    """Per-class probability grid, shape (6, nz, ny, nx); sums to 1 per voxel."""

    data: np.ndarray
    spacing: Spacing = field(default_factory=lambda: Spacing(5.0, 1.0, 1.0))

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 4 or self.data.shape[0] != NUM_CLASSES:
            raise VolumeFormatError(
                f"probability grid must have shape (6, nz, ny, nx), got {self.data.shape}"
            )
        if self.data.min() < -1e-5 or self.data.max() > 1.0 + 1e-5:
            raise VolumeFormatError("probabilities must lie in [0, 1]")
        sums = self.data.sum(axis=0, dtype=np.float64)
        if np.abs(sums - 1.0).max() > 1e-5:
            raise VolumeFormatError("per-voxel class probabilities must sum to 1 within 1e-5")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


def assert_paired(hu: HUVolume, labels: LabelVolume):
    """HU and label grids that travel together must share dims."""
    if hu.dims != labels.dims:
        raise VolumeFormatError(f"paired volumes differ in dims: {hu.dims} vs {labels.dims}")


def save_volume(volume: HUVolume | LabelVolume, path) -> None:
    """Write a volume in the .vbc format (re-readable bit-exactly)."""
    if isinstance(volume, HUVolume):
        kind, payload = "hu", volume.data.astype("<f4", copy=False)
    elif isinstance(volume, LabelVolume):
        kind, payload = "label", volume.data.astype("<u1", copy=False)
    else:
        raise TypeError(f"cannot save {type(volume).__name__} as a .vbc volume")
    header = {
        "kind": kind,
        "dims": [int(d) for d in volume.dims],
        "spacing_mm": volume.spacing.as_list(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload.tobytes())


def load_volume(path) -> HUVolume | LabelVolume:
    """Read a .vbc file; validates header, payload size and label domain."""
    raw = Path(path).read_bytes()
    if len(raw) < len(VOLUME_MAGIC) + 4 or raw[: len(VOLUME_MAGIC)] != VOLUME_MAGIC:
        raise VolumeFormatError(f"{path}: not a .vbc volume (bad magic)")
    offset = len(VOLUME_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if offset + hlen > len(raw):
        raise VolumeFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[offset : offset + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VolumeFormatError(f"{path}: malformed header: {exc}") from exc
    offset += hlen

    kind = header.get("kind")
    dims = header.get("dims")
    if kind not in ("hu", "label"):
        raise VolumeFormatError(f"{path}: unknown volume kind {kind!r}")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d > 0 for d in dims)
    ):
        raise VolumeFormatError(f"{path}: bad dims {dims!r}")
    spacing_mm = header.get("spacing_mm")
    if not isinstance(spacing_mm, list) or len(spacing_mm) != 3:
        raise VolumeFormatError(f"{path}: bad spacing {spacing_mm!r}")
    spacing = Spacing(*[float(s) for s in spacing_mm])

    dtype = np.dtype("<f4") if kind == "hu" else np.dtype("<u1")
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    payload = raw[offset:]
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{path}: payload holds {len(payload)} bytes, header dims require {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(dims)
    if kind == "hu":
        return HUVolume(data, spacing)
    return LabelVolume(data, spacing)
