"""Sørensen-Dice overlap per class (ignore-masked) and the intraclass
correlation coefficient for paired per-slice volume series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import (
    IGNORE_LABEL,
    REPORT_CLASS_ORDER,
    BodyRegionLabel,
    LabelVolume,
)


def _label_array(x) -> np.ndarray:
    if isinstance(x, LabelVolume):
        return x.data
    return np.asarray(x)


def dice_score(pred, gt, class_id: int) -> float:
    """2|A∩B| / (|A|+|B|) over voxels not ignore-labelled in the reference;
    1.0 when both masks are empty."""
    p = _label_array(pred)
    g = _label_array(gt)
    if p.shape != g.shape:
        raise ValueError(f"dice over mismatched dims {p.shape} vs {g.shape}")
    keep = g != IGNORE_LABEL
    a = p[keep] == class_id
    b = g[keep] == class_id
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


@dataclass(frozen=True)
class DiceResult:
    """Per-class dice in reporting column order (AC, B, M, ST, TC) plus mean."""

    abdominal_cavity: float
    bones: float
    muscle: float
    subcutaneous_tissue: float
    thoracic_cavity: float
    mean: float

    def report_row(self) -> tuple[float, ...]:
        return (
            self.abdominal_cavity,
            self.bones,
            self.muscle,
            self.subcutaneous_tissue,
            self.thoracic_cavity,
            self.mean,
        )


_FIELD_BY_CLASS = {
    BodyRegionLabel.ABDOMINAL_CAVITY: "abdominal_cavity",
    BodyRegionLabel.BONES: "bones",
    BodyRegionLabel.MUSCLE: "muscle",
    BodyRegionLabel.SUBCUTANEOUS_TISSUE: "subcutaneous_tissue",
    BodyRegionLabel.THORACIC_CAVITY: "thoracic_cavity",
}


def dice_result_from_scores(scores: dict[BodyRegionLabel, float]) -> DiceResult:
    vals = {_FIELD_BY_CLASS[c]: float(scores[c]) for c in REPORT_CLASS_ORDER}
    mean = sum(vals.values()) / len(vals)
    return DiceResult(mean=mean, **vals)


def mean_foreground_dice(pred, gt) -> DiceResult:
    """Dice for the five foreground classes; classes absent from both volumes
    score 1.0 and stay in the mean (consistent with the both-empty rule)."""
    scores = {c: dice_score(pred, gt, int(c)) for c in REPORT_CLASS_ORDER}
    return dice_result_from_scores(scores)


def icc(series_a, series_b, form: str = "agreement") -> float:
    """Single-measure two-way ICC between two measurement series.

    `agreement` is ICC(2,1) (absolute agreement, the default); `consistency`
    is ICC(3,1).  Subjects are the paired entries, raters the two series.
    Uses the standard ANOVA mean squares MS_R (rows), MS_C (columns) and
    MS_E (residual)."""
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"ICC needs two equal-length 1D series, got {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError(f"ICC needs at least 2 paired observations, got {n}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("ICC input must be finite")
    x = np.column_stack([a, b])
    k = 2
    grand = x.mean()
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    ms_rows = k * ((row_means - grand) ** 2).sum() / (n - 1)
    ms_cols = n * ((col_means - grand) ** 2).sum() / (k - 1)
    resid = x - row_means[:, None] - col_means[None, :] + grand
    ms_err = (resid**2).sum() / ((n - 1) * (k - 1))
    if form == "agreement":
        denom = ms_rows + (k - 1) * ms_err + (k / n) * (ms_cols - ms_err)
    elif form == "consistency":
        denom = ms_rows + (k - 1) * ms_err
    else:
        raise ValueError(f"unknown ICC form {form!r}; use 'agreement' or 'consistency'")
    if denom == 0.0:
        if np.array_equal(a, b):
            return 1.0
        raise ValueError("ICC undefined: zero total variance with differing series")
    return float((ms_rows - ms_err) / denom)
