"""Segmentation losses with ignore-label masking.

Cross entropy averages the negative log-probability of the true class over
annotated voxels only.  The dice term skips the background class and sums
its per-class overlap ratios over annotated voxels, epsilon-smoothed so a
class absent from both prediction and reference contributes no penalty.
Both are first-class graph nodes with analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ops
from .engine.tensor import Tensor, graph_node
from .volume import IGNORE_LABEL, NUM_CLASSES

LOG_CLAMP = 1e-12
DICE_EPS = 1e-5


@dataclass(frozen=True)
class LossValue:
    xce: float
    dice: float
    combined: float
    annotated_voxels: int
    node: Tensor


def _prepare(probs: Tensor, labels):
    lbl = np.asarray(labels)
    if lbl.ndim == 3:
        lbl = lbl[None]
    if lbl.ndim != 4 or lbl.shape[0] != probs.shape[0] or lbl.shape[1:] != probs.shape[2:]:
        raise ValueError(f"label shape {lbl.shape} does not match probabilities {probs.shape}")
    mask = lbl != IGNORE_LABEL
    n_annotated = int(mask.sum())
    if n_annotated == 0:
        raise ValueError("no annotated voxels (everything is ignore-labelled)")
    return lbl, mask, n_annotated


def xce_loss(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class over annotated voxels."""
    lbl, mask, n = _prepare(probs, labels)
    safe = np.where(mask, lbl, 0).astype(np.int64)
    p_true = np.take_along_axis(probs.data, safe[:, None], axis=1)[:, 0]
    clamped = np.maximum(p_true.astype(np.float64), LOG_CLAMP)
    value = -np.log(clamped[mask]).sum() / n

    def backward(g):
        if not probs.requires_grad:
            return
        live = mask & (p_true > LOG_CLAMP)
        contrib = np.where(live, -float(g) / (n * clamped), 0.0)
        gp = np.zeros_like(probs.data)
        np.put_along_axis(gp, safe[:, None], contrib[:, None].astype(probs.dtype), axis=1)
        probs.accumulate_grad(gp)

    return graph_node(np.float64(value), (probs,), backward)


def dice_loss(probs: Tensor, labels, eps: float = DICE_EPS) -> Tensor:
    """One minus the mean epsilon-smoothed overlap ratio of the five
    foreground classes, computed over annotated voxels only."""
    lbl, mask, _ = _prepare(probs, labels)
    maskf = mask.astype(probs.dtype)
    num = np.zeros(NUM_CLASSES)
    den = np.zeros(NUM_CLASSES)
    for c in range(1, NUM_CLASSES):
        yc = (lbl == c) & mask
        pc = probs.data[:, c]
        p_sum = (pc * maskf).sum(dtype=np.float64)
        overlap = (pc * yc).sum(dtype=np.float64)
        y_sum = float(yc.sum())
        num[c] = 2.0 * overlap + eps
        den[c] = p_sum + y_sum + eps
    ratios = num[1:] / den[1:]
    value = 1.0 - ratios.sum() / (NUM_CLASSES - 1)

    def backward(g):
        if not probs.requires_grad:
            return
        gp = np.zeros_like(probs.data)
        scale = -float(g) / (NUM_CLASSES - 1)
        for c in range(1, NUM_CLASSES):
            yc = ((lbl == c) & mask).astype(probs.dtype)
            # d(num/den)/dp = (2*y*den - num) / den^2 on annotated voxels
            gp[:, c] = scale * (yc * (2.0 / den[c]) - num[c] / den[c] ** 2) * maskf
        probs.accumulate_grad(gp)

    return graph_node(np.float64(value), (probs,), backward)


def combined_loss(probs: Tensor, labels, eps: float = DICE_EPS) -> LossValue:
    """Equal-weight sum of the two losses; gradients flow through both."""
    _, _, n = _prepare(probs, labels)
    x = xce_loss(probs, labels)
    d = dice_loss(probs, labels, eps)
    node = ops.add(ops.scale(x, 0.5), ops.scale(d, 0.5))
    return LossValue(
        xce=x.item(),
        dice=d.item(),
        combined=node.item(),
        annotated_voxels=n,
        node=node,
    )
