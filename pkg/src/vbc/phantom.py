"""Procedural abdomen-like phantoms with exactly known labels.

Each slice is a nest of ellipses: air outside the body, a subcutaneous fat
ring, a muscle ring, and an interior cavity holding bone columns, organ-like
soft tissue and blobs of visceral fat.  The top slices cap the stack with a
lung-intensity thoracic cavity so all six classes appear.  Labels come from
the exact generating geometry, so the returned analytic composition is an
independent ground truth for the quantification pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .quantify import CompositionReport, report_from_counts
from .volume import (
    IGNORE_LABEL,
    NUM_CLASSES,
    BodyRegionLabel,
    HUVolume,
    LabelVolume,
    Spacing,
)

HU_AIR = -1000.0
HU_FAT = -100.0
HU_MUSCLE = 50.0
HU_BONE = 400.0
HU_LUNG = -800.0
HU_ORGAN = 30.0


class PhantomGeometryError(ValueError):
    """The requested geometry cannot nest body > SAT > muscle > cavity."""


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    nz: int = 40
    size: int = 256
    spacing: Spacing = Spacing(5.0, 1.0, 1.0)
    body_ry: float = 0.40  # fractions of `size`
    body_rx: float = 0.46
    sat_thickness: float = 0.07
    muscle_thickness: float = 0.05
    bone_count: int = 3
    bone_radius: float = 0.045
    visceral_fat_fraction: float = 0.35
    thoracic_cap: int = 6
    noise_sigma_hu: float = 20.0

    def __post_init__(self):
        if self.nz < 2 or self.size < 16:
            raise ValueError("phantom needs nz >= 2 and size >= 16")
        if not (1 <= self.thoracic_cap < self.nz):
            raise ValueError("thoracic_cap must leave abdominal slices below it")
        if not 0.0 <= self.visceral_fat_fraction <= 1.0:
            raise ValueError("visceral_fat_fraction must be in [0, 1]")
        if self.bone_count < 1 or self.noise_sigma_hu < 0:
            raise ValueError("need bone_count >= 1 and non-negative noise sigma")


def _slice_geometry(spec: PhantomSpec):
    """Per-slice ellipse radii; smooth bulge along z gives the slice series
    the between-slice variance ICC needs."""
    zs = (np.arange(spec.nz) + 0.5) / spec.nz
    mod = 0.80 + 0.20 * np.sin(np.pi * zs)
    ry = spec.body_ry * spec.size * mod
    rx = spec.body_rx * spec.size * mod
    t_sat = spec.sat_thickness * spec.size
    t_mus = spec.muscle_thickness * spec.size
    inner_ry = ry - t_sat - t_mus
    inner_rx = rx - t_sat - t_mus
    bone_r = spec.bone_radius * spec.size
    if inner_ry.min() < max(3.0, 2.5 * bone_r) or inner_rx.min() < max(3.0, 2.5 * bone_r):
        raise PhantomGeometryError(
            "rings do not nest: cavity too small for the requested thicknesses/bones"
        )
    return ry, rx, t_sat, t_mus, inner_ry, inner_rx, bone_r


def generate_phantom(spec: PhantomSpec):
    """Build (HUVolume, LabelVolume, analytic CompositionReport).

    The analytic report counts SAT/VAT/muscle voxels directly on the
    generating tissue/region maps (noise-free geometry)."""
    ry, rx, t_sat, t_mus, inner_ry, inner_rx, bone_r = _slice_geometry(spec)
    rng = np.random.default_rng(spec.seed)
    size, nz = spec.size, spec.nz
    c = (size - 1) / 2.0
    yy = np.arange(size)[:, None] - c
    xx = np.arange(size)[None, :] - c

    labels = np.zeros((nz, size, size), dtype=np.uint8)
    fat_tissue = np.zeros((nz, size, size), dtype=bool)
    muscle_tissue = np.zeros((nz, size, size), dtype=bool)
    interior_all = np.zeros((nz, size, size), dtype=bool)

    angles = 2.0 * np.pi * (np.arange(spec.bone_count) + 0.5) / spec.bone_count
    for z in range(nz):
        body = (yy / ry[z]) ** 2 + (xx / rx[z]) ** 2 <= 1.0
        sat_in = (yy / (ry[z] - t_sat)) ** 2 + (xx / (rx[z] - t_sat)) ** 2 <= 1.0
        mus_in = (yy / inner_ry[z]) ** 2 + (xx / inner_rx[z]) ** 2 <= 1.0
        sat_ring = body & ~sat_in
        mus_ring = sat_in & ~mus_in

        bones = np.zeros_like(body)
        for a in angles:
            by = 0.55 * inner_ry[z] * np.cos(a)
            bx = 0.55 * inner_rx[z] * np.sin(a)
            bones |= (yy - by) ** 2 + (xx - bx) ** 2 <= bone_r**2
        bones &= mus_in

        sl = labels[z]
        sl[sat_ring] = BodyRegionLabel.SUBCUTANEOUS_TISSUE
        sl[mus_ring] = BodyRegionLabel.MUSCLE
        if z < spec.thoracic_cap:
            sl[mus_in] = BodyRegionLabel.THORACIC_CAVITY
        else:
            sl[mus_in] = BodyRegionLabel.ABDOMINAL_CAVITY
        sl[bones] = BodyRegionLabel.BONES

        fat_tissue[z][sat_ring] = True
        muscle_tissue[z][mus_ring] = True
        interior_all[z] = mus_in & ~bones

    # visceral fat: smooth random field thresholded to the requested fraction
    abdominal = interior_all & (labels == BodyRegionLabel.ABDOMINAL_CAVITY)
    if spec.visceral_fat_fraction > 0 and abdominal.any():
        field = gaussian_filter(
            rng.standard_normal((nz, size, size)), sigma=(1.0, size / 16.0, size / 16.0)
        )
        q = np.quantile(field[abdominal], 1.0 - spec.visceral_fat_fraction)
        fat_tissue |= abdominal & (field >= q)

    hu_clean = np.full((nz, size, size), HU_AIR, dtype=np.float32)
    hu_clean[labels == BodyRegionLabel.MUSCLE] = HU_MUSCLE
    hu_clean[labels == BodyRegionLabel.BONES] = HU_BONE
    hu_clean[labels == BodyRegionLabel.THORACIC_CAVITY] = HU_LUNG
    hu_clean[labels == BodyRegionLabel.ABDOMINAL_CAVITY] = HU_ORGAN
    hu_clean[fat_tissue] = HU_FAT  # both the SAT ring and visceral blobs

    present = set(np.unique(labels).tolist())
    if not set(range(NUM_CLASSES)) <= present:
        raise PhantomGeometryError(f"phantom lost classes, only {sorted(present)} present")

    sat_c = (fat_tissue & (labels == BodyRegionLabel.SUBCUTANEOUS_TISSUE)).sum(axis=(1, 2))
    vat_c = (fat_tissue & (labels == BodyRegionLabel.ABDOMINAL_CAVITY)).sum(axis=(1, 2))
    mus_c = (muscle_tissue & (labels == BodyRegionLabel.MUSCLE)).sum(axis=(1, 2))
    analytic = report_from_counts(
        np.stack([sat_c, vat_c, mus_c], axis=1),
        spec.spacing,
        metadata={"source": "phantom-analytic", "seed": spec.seed},
    )

    hu = hu_clean
    if spec.noise_sigma_hu > 0:
        hu = hu_clean + spec.noise_sigma_hu * rng.standard_normal(hu_clean.shape).astype(
            np.float32
        )
    return HUVolume(hu, spec.spacing), LabelVolume(labels, spec.spacing), analytic


def sparsify_annotation(labels: LabelVolume, period: int = 5) -> LabelVolume:
    """Keep every `period`-th slice annotated; the rest becomes ignore."""
    if period < 1:
        raise ValueError(f"period must be >= 1, got {period}")
    data = labels.data.copy()
    for z in range(data.shape[0]):
        if z % period:
            data[z] = IGNORE_LABEL
    return LabelVolume(data, labels.spacing)
