"""Whole-volume prediction: sliding z-window with center-weighted slab
aggregation, ensemble probability averaging, and label extraction."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine
from .engine.tensor import Tensor
from .models import Model
from .preproc import downscale_xy, multi_window_stack
from .volume import HUVolume, LabelVolume, ProbabilityVolume, Spacing, VolumeFormatError

PROB_MAGIC = b"VBCPRB01"

DEFAULT_WINDOW = 32
DEFAULT_OVERLAP = 0.75
PAD_VALUE = -1.0  # normalized-space air


def slab_weights(window: int, kind: str = "tent") -> np.ndarray:
    """Per-slice aggregation weights, largest at the slab center."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    i = np.arange(window, dtype=np.float64)
    if kind == "tent":
        w = np.minimum(i + 1, window - i)
    elif kind == "gauss":
        center = (window - 1) / 2.0
        sigma = max(window / 4.0, 1.0)
        w = np.exp(-0.5 * ((i - center) / sigma) ** 2)
    else:
        raise ValueError(f"unknown weighting {kind!r}; use 'tent' or 'gauss'")
    return w


def window_starts(nz: int, window: int = DEFAULT_WINDOW, overlap: float = DEFAULT_OVERLAP):
    """Start indices of the z-slabs; stride is window*(1-overlap), with a
    final flush window appended so every slice is covered."""
    if nz < 1:
        raise ValueError(f"nz must be >= 1, got {nz}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    if nz <= window:
        return [0]
    stride = max(1, int(round(window * (1.0 - overlap))))
    starts = list(range(0, nz - window + 1, stride))
    if starts[-1] != nz - window:
        starts.append(nz - window)
    return starts


@dataclass(frozen=True)
class SlidingWindowPlan:
    window: int
    stride: int
    starts: tuple[int, ...]
    weights: np.ndarray

    @property
    def coverage(self) -> np.ndarray:
        """Accumulated weight per slice; must be strictly positive."""
        nz = max(s + self.window for s in self.starts)
        acc = np.zeros(nz)
        for s in self.starts:
            acc[s : s + self.window] += self.weights
        return acc


def plan_sliding_window(
    nz: int,
    window: int = DEFAULT_WINDOW,
    overlap: float = DEFAULT_OVERLAP,
    weighting: str = "tent",
) -> SlidingWindowPlan:
    starts = window_starts(max(nz, window), window, overlap)
    stride = max(1, int(round(window * (1.0 - overlap))))
    return SlidingWindowPlan(window, stride, tuple(starts), slab_weights(window, weighting))


def sliding_window_predict(
    model: Model,
    x: np.ndarray,
    window: int = DEFAULT_WINDOW,
    overlap: float = DEFAULT_OVERLAP,
    weighting: str = "tent",
) -> np.ndarray:
    """Weighted softmax aggregation over overlapping z-slabs.

    `x` is the preprocessed input (1, channels, nz, ny, nx); volumes shorter
    than the window are symmetrically padded with normalized air and cropped
    back afterwards.  Returns per-class probabilities (classes, nz, ny, nx)."""
    if x.ndim != 5 or x.shape[0] != 1:
        raise ValueError(f"expected preprocessed input (1, c, nz, ny, nx), got {x.shape}")
    nz = x.shape[2]
    pad0 = 0
    if nz < window:
        missing = window - nz
        pad0 = missing // 2
        x = np.pad(
            x,
            ((0, 0), (0, 0), (pad0, missing - pad0), (0, 0), (0, 0)),
            constant_values=np.float32(PAD_VALUE),
        )
    nz_eff = x.shape[2]
    plan = plan_sliding_window(nz_eff, window, overlap, weighting)
    wts = plan.weights.astype(np.float32)

    classes = model.spec.out_classes
    num = np.zeros((classes, nz_eff, x.shape[3], x.shape[4]), dtype=np.float32)
    den = np.zeros(nz_eff, dtype=np.float32)
    with engine.no_grad():
        for s in plan.starts:
            slab = Tensor(np.ascontiguousarray(x[:, :, s : s + window]))
            probs = engine.ops.softmax_channels(model.forward(slab)).data[0]
            num[:, s : s + window] += probs * wts[None, :, None, None]
            den[s : s + window] += wts
    out = num / den[None, :, None, None]
    return out[:, pad0 : pad0 + nz]


def ensemble_predict(models: list[Model], x: np.ndarray, **kwargs) -> np.ndarray:
    """Arithmetic mean of the member probability volumes."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    spec = models[0].spec
    for m in models[1:]:
        if m.spec != spec:
            raise ValueError(f"ensemble spec mismatch: {m.spec} vs {spec}")
    acc = None
    for m in models:
        p = sliding_window_predict(m, x, **kwargs)
        acc = p if acc is None else acc + p
    return acc / np.float32(len(models))


def argmax_labels(probs, spacing: Spacing | None = None) -> LabelVolume:
    """Most probable class per voxel; ties break to the lowest class index."""
    if isinstance(probs, ProbabilityVolume):
        data, spacing = probs.data, probs.spacing
    else:
        data = np.asarray(probs)
        if spacing is None:
            raise ValueError("spacing required when passing a raw array")
    return LabelVolume(np.argmax(data, axis=0).astype(np.uint8), spacing)


def predict_volume(
    models: list[Model],
    hu: HUVolume,
    windows="multi",
    downscale: int = 2,
    window: int = DEFAULT_WINDOW,
    overlap: float = DEFAULT_OVERLAP,
    weighting: str = "tent",
):
    """Full pipeline for one volume: downscale, stack HU windows, ensemble
    sliding-window prediction.  Returns (ProbabilityVolume, LabelVolume) on
    the processing grid."""
    ds = downscale_xy(hu, downscale)
    x = multi_window_stack(ds, windows)
    probs = ensemble_predict(models, x, window=window, overlap=overlap, weighting=weighting)
    pv = ProbabilityVolume(probs, ds.spacing)
    return pv, argmax_labels(pv)


def save_probabilities(probs: ProbabilityVolume, path):
    header = {
        "kind": "prob",
        "dims": [int(d) for d in probs.data.shape],
        "spacing_mm": probs.spacing.as_list(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PROB_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(probs.data.astype("<f4", copy=False).tobytes())


def load_probabilities(path) -> ProbabilityVolume:
    raw = Path(path).read_bytes()
    if raw[: len(PROB_MAGIC)] != PROB_MAGIC:
        raise VolumeFormatError(f"{path}: not a probability dump")
    off = len(PROB_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    dims = header["dims"]
    data = np.frombuffer(raw[off:], dtype="<f4").reshape(dims)
    return ProbabilityVolume(data, Spacing(*header["spacing_mm"]))
