"""Volumetric body composition: 3D semantic segmentation of CT-like volumes
and HU-threshold tissue quantification."""

__version__ = "0.1.0"

from .volume import (
    BodyRegionLabel,
    HUVolume,
    LabelVolume,
    ProbabilityVolume,
    Spacing,
    load_volume,
    save_volume,
    voxel_volume_ml,
)

__all__ = [
    "BodyRegionLabel",
    "HUVolume",
    "LabelVolume",
    "ProbabilityVolume",
    "Spacing",
    "__version__",
    "load_volume",
    "save_volume",
    "voxel_volume_ml",
]
