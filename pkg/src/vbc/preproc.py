"""HU windowing / normalization, in-plane downscaling, and the three
training-time augmentations (random aspect-ratio scale, x-flip, crop/pad).

All functions are pure; augmentation randomness comes from a caller-supplied
generator so per-sample streams stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import IGNORE_LABEL, HUVolume, LabelVolume, Spacing

PAD_HU = -1024.0  # air; maps to -1 under every default window

DEFAULT_SCALE_RANGE = (0.8, 1.2)
DEFAULT_CROP = (32, 256, 256)


@dataclass(frozen=True)
class HUWindow:
    """Intensity interval of interest; values outside are clipped."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"window requires finite lo < hi, got [{self.lo}, {self.hi}]")


# named presets; "multi" stacks the 12-bit range with abdomen and liver windows
WINDOW_PRESETS: dict[str, tuple[tuple[float, float], ...]] = {
    "multi": ((-1024.0, 4096.0), (-150.0, 250.0), (-95.0, 155.0)),
    "full12bit": ((-1024.0, 3071.0),),
    "abdomen": ((-150.0, 250.0),),
    "liver": ((-95.0, 155.0),),
}


def resolve_windows(spec) -> list[HUWindow]:
    """Accept a preset name or a list of [lo, hi] pairs."""
    if isinstance(spec, str):
        try:
            pairs = WINDOW_PRESETS[spec]
        except KeyError:
            raise ValueError(f"unknown window preset {spec!r}; presets: {sorted(WINDOW_PRESETS)}")
        return [HUWindow(lo, hi) for lo, hi in pairs]
    windows = [w if isinstance(w, HUWindow) else HUWindow(float(w[0]), float(w[1])) for w in spec]
    if not windows:
        raise ValueError("need at least one HU window")
    return windows


def window_normalize_array(arr: np.ndarray, window: HUWindow) -> np.ndarray:
    """Clip to [lo, hi] and map affinely onto [-1, 1]."""
    arr = np.asarray(arr, dtype=np.float32)
    clipped = np.clip(arr, window.lo, window.hi)
    scale = np.float32(2.0 / (window.hi - window.lo))
    return (clipped - np.float32(window.lo)) * scale - np.float32(1.0)


def window_normalize(volume: HUVolume, window: HUWindow) -> np.ndarray:
    return window_normalize_array(volume.data, window)


def stack_windows_array(arr: np.ndarray, windows) -> np.ndarray:
    """Stack one normalized channel per window: (1, n_windows, nz, ny, nx)."""
    windows = resolve_windows(windows)
    channels = [window_normalize_array(arr, w) for w in windows]
    return np.stack(channels, axis=0)[None]


def multi_window_stack(volume: HUVolume, windows="multi") -> np.ndarray:
    return stack_windows_array(volume.data, windows)


def downscale_xy(volume: HUVolume, factor: int) -> HUVolume:
    """Block-average in-plane by `factor`; z untouched, spacing scaled."""
    if factor < 1:
        raise ValueError(f"downscale factor must be >= 1, got {factor}")
    if factor == 1:
        return volume
    nz, ny, nx = volume.dims
    if ny % factor or nx % factor:
        raise ValueError(f"in-plane dims {ny}x{nx} not divisible by factor {factor}")
    blocks = volume.data.reshape(nz, ny // factor, factor, nx // factor, factor)
    data = blocks.mean(axis=(2, 4), dtype=np.float64).astype(np.float32)
    s = volume.spacing
    return HUVolume(data, Spacing(s.z_mm, s.y_mm * factor, s.x_mm * factor))


def downscale_labels_xy(labels: LabelVolume, factor: int) -> LabelVolume:
    """Subsample labels on the same grid the block-averaged image lives on."""
    if factor < 1:
        raise ValueError(f"downscale factor must be >= 1, got {factor}")
    if factor == 1:
        return labels
    nz, ny, nx = labels.dims
    if ny % factor or nx % factor:
        raise ValueError(f"in-plane dims {ny}x{nx} not divisible by factor {factor}")
    data = labels.data[:, ::factor, ::factor].copy()
    s = labels.spacing
    return LabelVolume(data, Spacing(s.z_mm, s.y_mm * factor, s.x_mm * factor))


@dataclass(frozen=True)
class AugmentationParams:
    scale_x: float
    scale_y: float
    flip_x: bool
    crop_z0: int
    crop_y0: int
    crop_x0: int

    def __post_init__(self):
        lo, hi = DEFAULT_SCALE_RANGE
        for s in (self.scale_x, self.scale_y):
            if not lo <= s <= hi:
                raise ValueError(f"scale factor {s} outside [{lo}, {hi}]")
        if min(self.crop_z0, self.crop_y0, self.crop_x0) < 0:
            raise ValueError("crop offsets must be non-negative")


def _linear_coords(n_src: int, n_dst: int):
    """Half-pixel-center source coordinates, clamped to the valid range."""
    src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    src = np.clip(src, 0.0, n_src - 1.0)
    if n_src == 1:
        return np.zeros(n_dst, dtype=np.int64), np.zeros(n_dst)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_src - 2)
    return i0, src - i0


def linear_resample_axis(arr: np.ndarray, axis: int, n_dst: int) -> np.ndarray:
    n_src = arr.shape[axis]
    i0, t = _linear_coords(n_src, n_dst)
    i1 = np.minimum(i0 + 1, n_src - 1)
    shape = [1] * arr.ndim
    shape[axis] = n_dst
    t = t.reshape(shape).astype(arr.dtype if arr.dtype.kind == "f" else np.float32)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    return (a * (1.0 - t) + b * t).astype(np.float32)


def nearest_resample_axis(arr: np.ndarray, axis: int, n_dst: int) -> np.ndarray:
    src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (arr.shape[axis] / n_dst) - 0.5
    idx = np.clip(np.round(src), 0, arr.shape[axis] - 1).astype(np.int64)
    return np.take(arr, idx, axis=axis)


def augment_scale(image: np.ndarray, labels: np.ndarray, scale_x: float, scale_y: float):
    """Resample in-plane by independent x/y factors; image bilinear, labels
    nearest so the label domain (including ignore) is preserved."""
    nz, ny, nx = image.shape
    new_ny = max(1, int(round(ny * scale_y)))
    new_nx = max(1, int(round(nx * scale_x)))
    if (new_ny, new_nx) == (ny, nx):
        return image, labels
    img = linear_resample_axis(image, 1, new_ny)
    img = linear_resample_axis(img, 2, new_nx)
    lab = nearest_resample_axis(labels, 1, new_ny)
    lab = nearest_resample_axis(lab, 2, new_nx)
    return img, lab


def augment_flip_x(image: np.ndarray, labels: np.ndarray):
    return image[..., ::-1].copy(), labels[..., ::-1].copy()


def _pad_to(image: np.ndarray, labels: np.ndarray, target):
    pads = []
    for ax in range(3):
        missing = max(0, target[ax] - image.shape[ax])
        pads.append((missing // 2, missing - missing // 2))
    if any(p != (0, 0) for p in pads):
        image = np.pad(image, pads, constant_values=np.float32(PAD_HU))
        labels = np.pad(labels, pads, constant_values=np.uint8(IGNORE_LABEL))
    return image, labels


def crop_subvolume(
    image: np.ndarray,
    labels: np.ndarray,
    params: AugmentationParams,
    crop_shape=DEFAULT_CROP,
):
    """Cut a fixed-size training block; small volumes are padded symmetrically
    first (image with air HU, labels with ignore)."""
    image, labels = _pad_to(image, labels, crop_shape)
    z0, y0, x0 = params.crop_z0, params.crop_y0, params.crop_x0
    d, h, w = crop_shape
    if z0 + d > image.shape[0] or y0 + h > image.shape[1] or x0 + w > image.shape[2]:
        raise ValueError(
            f"crop at ({z0},{y0},{x0}) exceeds padded dims {image.shape} for {crop_shape}"
        )
    return (
        image[z0 : z0 + d, y0 : y0 + h, x0 : x0 + w],
        labels[z0 : z0 + d, y0 : y0 + h, x0 : x0 + w],
    )


def sample_augmentation_params(
    rng: np.random.Generator,
    dims,
    crop_shape=DEFAULT_CROP,
    scale_range=DEFAULT_SCALE_RANGE,
    flip_prob: float = 0.5,
    enable_scale: bool = True,
    enable_flip: bool = True,
) -> AugmentationParams:
    """Draw one set of augmentation parameters for a volume of shape `dims`.

    Crop offsets are drawn uniformly over the post-scale (and post-pad) valid
    range, so any sampled window stays inside the volume."""
    nz, ny, nx = dims
    if enable_scale:
        scale_x = float(rng.uniform(*scale_range))
        scale_y = float(rng.uniform(*scale_range))
    else:
        scale_x = scale_y = 1.0
    flip = bool(rng.random() < flip_prob) if enable_flip else False
    scaled = (nz, max(1, int(round(ny * scale_y))), max(1, int(round(nx * scale_x))))
    offs = []
    for ax in range(3):
        slack = max(0, scaled[ax] - crop_shape[ax])
        offs.append(int(rng.integers(0, slack + 1)))
    return AugmentationParams(scale_x, scale_y, flip, *offs)


def build_training_sample(
    image: np.ndarray,
    labels: np.ndarray,
    params: AugmentationParams,
    windows,
    crop_shape=DEFAULT_CROP,
):
    """Apply scale -> flip -> crop/pad, then stack window channels.

    Returns the network input (1, n_windows, d, h, w) and the label crop."""
    if (params.scale_x, params.scale_y) != (1.0, 1.0):
        image, labels = augment_scale(image, labels, params.scale_x, params.scale_y)
    if params.flip_x:
        image, labels = augment_flip_x(image, labels)
    image, labels = crop_subvolume(image, labels, params, crop_shape)
    return stack_windows_array(image, windows), labels
