"""HU-threshold tissue subclassification within predicted body regions.

Adipose voxels lie in [-190, -30] HU, muscle in [-29, 150] HU (closed
intervals; real-valued HU strictly between -30 and -29 belongs to neither).
Adipose inside the abdominal cavity counts as VAT, inside the subcutaneous
ring as SAT; muscle-range HU counts only inside the predicted muscle region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .volume import (
    BodyRegionLabel,
    HUVolume,
    LabelVolume,
    Spacing,
    assert_paired,
    voxel_volume_ml,
)

ADIPOSE_HU = (-190.0, -30.0)
MUSCLE_HU = (-29.0, 150.0)


class TissueClass(Enum):
    ADIPOSE = "adipose"
    MUSCLE = "muscle"
    OTHER = "other"


class Compartment(Enum):
    SAT = "sat"
    VAT = "vat"
    MUSCLE_TISSUE = "muscle"
    UNASSIGNED = "unassigned"


def classify_tissue(hu: float) -> TissueClass:
    if not np.isfinite(hu):
        raise ValueError(f"HU must be finite, got {hu}")
    if ADIPOSE_HU[0] <= hu <= ADIPOSE_HU[1]:
        return TissueClass.ADIPOSE
    if MUSCLE_HU[0] <= hu <= MUSCLE_HU[1]:
        return TissueClass.MUSCLE
    return TissueClass.OTHER


def assign_compartment(tissue: TissueClass, region) -> Compartment:
    try:
        region = BodyRegionLabel(int(region))
    except ValueError:
        return Compartment.UNASSIGNED  # ignore label or anything else
    if tissue is TissueClass.ADIPOSE and region is BodyRegionLabel.ABDOMINAL_CAVITY:
        return Compartment.VAT
    if tissue is TissueClass.ADIPOSE and region is BodyRegionLabel.SUBCUTANEOUS_TISSUE:
        return Compartment.SAT
    if tissue is TissueClass.MUSCLE and region is BodyRegionLabel.MUSCLE:
        return Compartment.MUSCLE_TISSUE
    return Compartment.UNASSIGNED


@dataclass(frozen=True)
class SliceComposition:
    index: int
    sat_voxels: int
    vat_voxels: int
    muscle_voxels: int
    sat_ml: float
    vat_ml: float
    muscle_ml: float


@dataclass
class CompositionReport:
    slices: list[SliceComposition]
    voxel_volume_ml: float
    spacing: Spacing
    total_sat_ml: float
    total_vat_ml: float
    total_muscle_ml: float
    metadata: dict = field(default_factory=dict)


def report_from_counts(counts: np.ndarray, spacing: Spacing, metadata=None) -> CompositionReport:
    """counts: (nz, 3) integer voxel counts ordered (sat, vat, muscle)."""
    vox_ml = voxel_volume_ml(spacing)
    rows = []
    for z, (sat, vat, mus) in enumerate(counts):
        rows.append(
            SliceComposition(
                index=z,
                sat_voxels=int(sat),
                vat_voxels=int(vat),
                muscle_voxels=int(mus),
                sat_ml=int(sat) * vox_ml,
                vat_ml=int(vat) * vox_ml,
                muscle_ml=int(mus) * vox_ml,
            )
        )
    return CompositionReport(
        slices=rows,
        voxel_volume_ml=vox_ml,
        spacing=spacing,
        total_sat_ml=sum(r.sat_ml for r in rows),
        total_vat_ml=sum(r.vat_ml for r in rows),
        total_muscle_ml=sum(r.muscle_ml for r in rows),
        metadata=dict(metadata or {}),
    )


def quantify(hu: HUVolume, labels: LabelVolume, metadata=None) -> CompositionReport:
    """Per-axial-slice SAT/VAT/muscle volumes from thresholded HU conjoined
    with the region labels."""
    assert_paired(hu, labels)
    h = hu.data
    lab = labels.data
    adipose = (h >= ADIPOSE_HU[0]) & (h <= ADIPOSE_HU[1])
    muscle_range = (h >= MUSCLE_HU[0]) & (h <= MUSCLE_HU[1])
    sat = adipose & (lab == BodyRegionLabel.SUBCUTANEOUS_TISSUE)
    vat = adipose & (lab == BodyRegionLabel.ABDOMINAL_CAVITY)
    mus = muscle_range & (lab == BodyRegionLabel.MUSCLE)
    counts = np.stack(
        [sat.sum(axis=(1, 2)), vat.sum(axis=(1, 2)), mus.sum(axis=(1, 2))], axis=1
    )
    return report_from_counts(counts, hu.spacing, metadata)
