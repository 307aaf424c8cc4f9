"""Central finite-difference verification of every analytic gradient.

Each check builds a scalar loss from one layer (or a whole small network),
backpropagates once, then perturbs elements of every leaf tensor by +-h and
compares.  The relative error is |a - n| / max(1, |a| + |n|) so near-zero
gradients are judged absolutely.  Runs in float64 only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import ops
from .engine.tensor import Tensor, graph_node
from .losses import combined_loss, dice_loss, xce_loss
from .models import ArchitectureSpec, build_model
from .volume import IGNORE_LABEL, NUM_CLASSES

DEFAULT_H = 1e-4
TOL_NONLINEAR = 1e-5
TOL_LINEAR = 1e-9
TOL_END_TO_END = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    worst_tensor: str
    worst_index: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _project(t: Tensor, r: np.ndarray) -> Tensor:
    """Fixed random linear readout sum(t * r): turns any op output into a
    scalar without adding nonlinearity of its own."""
    value = float((t.data * r).sum())

    def backward(g):
        if t.requires_grad:
            t.accumulate_grad(float(g) * r)

    return graph_node(np.float64(value), (t,), backward)


def grad_check(build_loss, wiggle, h: float = DEFAULT_H, max_per_tensor=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    `build_loss()` must rebuild the graph from the leaf tensors in `wiggle`
    (a list of (name, Tensor)); their `.data` is perturbed in place."""
    for _, t in wiggle:
        t.zero_grad()
    out = build_loss()
    out.backward()

    worst = (0.0, "", -1)
    for name, t in wiggle:
        if t.grad is None:
            raise RuntimeError(f"no gradient reached {name}")
        flat = t.data.reshape(-1)
        ga = t.grad.reshape(-1)
        n = flat.size
        if max_per_tensor is not None and n > max_per_tensor:
            if rng is None:
                raise ValueError("sampling requires an rng")
            indices = rng.choice(n, size=max_per_tensor, replace=False)
        else:
            indices = range(n)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            fp = build_loss().item()
            flat[i] = orig - h
            fm = build_loss().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(ga[i] - numeric) / max(1.0, abs(ga[i]) + abs(numeric))
            if err > worst[0]:
                worst = (float(err), name, int(i))
    return worst


def _leaf(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _random_labels(rng, shape, with_ignore=True):
    lbl = rng.integers(0, NUM_CLASSES, size=shape).astype(np.uint8)
    if with_ignore:
        drop = rng.random(shape) < 0.2
        lbl[drop] = IGNORE_LABEL
        if (lbl != IGNORE_LABEL).sum() == 0:
            lbl.reshape(-1)[0] = 0
    return lbl


def _check_conv(k: int) -> GradCheckResult:
    rng = np.random.default_rng(11 + k)
    x = _leaf(rng, (1, 2, 3, 4, 5))
    w = _leaf(rng, (3, 2, k, k, k))
    b = _leaf(rng, (3,))
    r = rng.standard_normal((1, 3, 3, 4, 5))
    err = grad_check(lambda: _project(ops.conv3d(x, w, b), r), [("x", x), ("w", w), ("b", b)])
    return GradCheckResult(f"conv3d_k{k}", err[0], TOL_NONLINEAR, err[1], err[2])


def _check_maxpool() -> GradCheckResult:
    rng = np.random.default_rng(23)
    # distinct entries with gaps >> h so the argmax never flips under +-h
    vals = rng.permutation(2 * 4 * 4 * 4).astype(np.float64) * 0.01
    x = Tensor(vals.reshape(1, 2, 4, 4, 4), requires_grad=True)
    r = rng.standard_normal((1, 2, 2, 2, 2))
    err = grad_check(lambda: _project(ops.maxpool3d(x), r), [("x", x)])
    return GradCheckResult("maxpool3d", err[0], TOL_NONLINEAR, err[1], err[2])


def _check_upsample() -> GradCheckResult:
    rng = np.random.default_rng(31)
    x = _leaf(rng, (1, 2, 2, 3, 4))
    r = rng.standard_normal((1, 2, 4, 6, 8))
    err = grad_check(lambda: _project(ops.trilinear_upsample(x), r), [("x", x)])
    return GradCheckResult("trilinear_upsample", err[0], TOL_LINEAR, err[1], err[2])


def _check_instance_norm() -> GradCheckResult:
    rng = np.random.default_rng(37)
    x = _leaf(rng, (1, 3, 3, 4, 4))
    gamma = _leaf(rng, (3,), 0.5, 1.5)
    beta = _leaf(rng, (3,), -0.5, 0.5)
    r = rng.standard_normal((1, 3, 3, 4, 4))
    err = grad_check(
        lambda: _project(ops.instance_norm(x, gamma, beta), r),
        [("x", x), ("gamma", gamma), ("beta", beta)],
    )
    return GradCheckResult("instance_norm", err[0], TOL_NONLINEAR, err[1], err[2])


def _check_relu() -> GradCheckResult:
    rng = np.random.default_rng(41)
    vals = rng.uniform(-1.0, 1.0, size=(1, 2, 3, 4, 4))
    vals += np.where(vals >= 0, 0.05, -0.05)  # stay off the kink by >> h
    x = Tensor(vals, requires_grad=True)
    r = rng.standard_normal(vals.shape)
    err = grad_check(lambda: _project(ops.relu(x), r), [("x", x)])
    return GradCheckResult("relu", err[0], TOL_NONLINEAR, err[1], err[2])


def _check_concat() -> GradCheckResult:
    rng = np.random.default_rng(43)
    a = _leaf(rng, (1, 2, 2, 3, 3))
    b = _leaf(rng, (1, 3, 2, 3, 3))
    r = rng.standard_normal((1, 5, 2, 3, 3))
    err = grad_check(lambda: _project(ops.concat_channels(a, b), r), [("a", a), ("b", b)])
    return GradCheckResult("concat_channels", err[0], TOL_LINEAR, err[1], err[2])


def _check_add() -> GradCheckResult:
    rng = np.random.default_rng(47)
    a = _leaf(rng, (1, 2, 2, 3, 3))
    b = _leaf(rng, (1, 2, 2, 3, 3))
    r = rng.standard_normal((1, 2, 2, 3, 3))
    err = grad_check(lambda: _project(ops.add(a, b), r), [("a", a), ("b", b)])
    return GradCheckResult("add", err[0], TOL_LINEAR, err[1], err[2])


def _check_softmax() -> GradCheckResult:
    rng = np.random.default_rng(53)
    x = _leaf(rng, (1, 6, 2, 3, 3), -2.0, 2.0)
    r = rng.standard_normal((1, 6, 2, 3, 3))
    err = grad_check(lambda: _project(ops.softmax_channels(x), r), [("x", x)])
    return GradCheckResult("softmax_channels", err[0], TOL_NONLINEAR, err[1], err[2])


def _check_loss(which: str) -> GradCheckResult:
    rng = np.random.default_rng(59)
    logits = _leaf(rng, (1, 6, 2, 4, 4), -2.0, 2.0)
    labels = _random_labels(rng, (1, 2, 4, 4))

    def build():
        p = ops.softmax_channels(logits)
        if which == "xce":
            return xce_loss(p, labels)
        if which == "dice":
            return dice_loss(p, labels)
        return combined_loss(p, labels).node

    err = grad_check(build, [("logits", logits)])
    return GradCheckResult(f"softmax_{which}_loss", err[0], TOL_NONLINEAR, err[1], err[2])


def _check_end_to_end(variant: str) -> GradCheckResult:
    rng = np.random.default_rng(61)
    spec = ArchitectureSpec(variant, nf=8, levels=2, in_channels=3, out_classes=6)
    model = build_model(spec, seed=rng, dtype=np.float64)
    x = Tensor(rng.uniform(-1, 1, size=(1, 3, 4, 8, 8)), requires_grad=True)
    labels = _random_labels(rng, (1, 4, 8, 8))

    def build():
        return combined_loss(ops.softmax_channels(model.forward(x)), labels).node

    wiggle = [("input", x)] + [(p.name, p) for p in model.parameters()]
    cap = max(8, 256 // len(wiggle))
    # h smaller than the per-layer default: a deep net always has some relu
    # pre-activations within 1e-4 of the kink, and a +-h straddle there makes
    # the central difference disagree with the one-sided subgradient
    err = grad_check(build, wiggle, h=1e-5, max_per_tensor=cap, rng=np.random.default_rng(67))
    return GradCheckResult(f"end_to_end_{variant}", err[0], TOL_END_TO_END, err[1], err[2])


def run_all(include_end_to_end: bool = True) -> list[GradCheckResult]:
    results = [
        _check_conv(1),
        _check_conv(3),
        _check_maxpool(),
        _check_upsample(),
        _check_instance_norm(),
        _check_relu(),
        _check_concat(),
        _check_add(),
        _check_softmax(),
        _check_loss("xce"),
        _check_loss("dice"),
        _check_loss("combined"),
    ]
    if include_end_to_end:
        results.append(_check_end_to_end("unet3d"))
        results.append(_check_end_to_end("multires_unet3d"))
    return results
