"""The layer set the segmentation networks need, with analytic gradients.

Convolutions are stride-1 zero-padded ("same") cross-correlations restricted
to 1x1x1 and 3x3x3 kernels.  The 3x3x3 path accumulates 27 shifted GEMMs
instead of materializing im2col columns: on a single core the plain slab
copies beat the strided gather by a wide margin and need no 85 MB buffer.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, graph_node


_CHUNK_VOX = 8192  # keep the column buffer a few tens of MB at most


def _col_chunks(xp: np.ndarray, b: int, d: int, h: int, wd: int, k: int, dtype):
    """Yield (z0, z1, columns) where columns is the (k^3*ci, chunk_vox)
    im2col buffer for slices [z0, z1); one big GEMM per chunk beats many
    small per-offset GEMMs by a wide margin on one core."""
    ci = xp.shape[1]
    plane = h * wd
    dz = max(1, min(d, _CHUNK_VOX // plane if plane <= _CHUNK_VOX else 1))
    cols = np.empty((k * k * k * ci, dz * plane), dtype=dtype)
    for z0 in range(0, d, dz):
        z1 = min(z0 + dz, d)
        cur = z1 - z0
        buf = cols[:, : cur * plane]
        row = 0
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    dst = buf[row : row + ci].reshape(ci, cur, h, wd)
                    dst[...] = xp[b, :, z0 + i : z1 + i, j : j + h, l : l + wd]
                    row += ci
        yield z0, z1, buf


def _conv3d_raw(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation of (n,c,d,h,w) with (co,ci,k,k,k)."""
    n, c, d, h, wd = x.shape
    co, ci, k = w.shape[0], w.shape[1], w.shape[2]
    if k == 1:
        x2 = x.reshape(n, c, -1)
        wm = w.reshape(co, ci)
        out = np.empty((n, co, x2.shape[2]), dtype=x.dtype)
        for b in range(n):
            np.matmul(wm, x2[b], out=out[b])
        return out.reshape(n, co, d, h, wd)
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    # rows of the column buffer are offset-major, channel-minor
    wm = np.ascontiguousarray(w.transpose(0, 2, 3, 4, 1)).reshape(co, k * k * k * ci)
    out = np.empty((n, co, d, h, wd), dtype=x.dtype)
    for b in range(n):
        for z0, z1, buf in _col_chunks(xp, b, d, h, wd, k, x.dtype):
            out[b, :, z0:z1] = (wm @ buf).reshape(co, z1 - z0, h, wd)
    return out


def _conv3d_wgrad(x: np.ndarray, gout: np.ndarray, k: int) -> np.ndarray:
    """Gradient of the same-padded conv wrt its kernel."""
    n, c, d, h, wd = x.shape
    co = gout.shape[1]
    vox = d * h * wd
    g2 = gout.reshape(n, co, vox)
    if k == 1:
        dw = np.zeros((co, c), dtype=x.dtype)
        x2 = x.reshape(n, c, vox)
        for b in range(n):
            dw += g2[b] @ x2[b].T
        return dw.reshape(co, c, 1, 1, 1)
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    plane = h * wd
    dw = np.zeros((co, k * k * k * c), dtype=x.dtype)
    for b in range(n):
        gb = gout[b].reshape(co, d, plane)
        for z0, z1, buf in _col_chunks(xp, b, d, h, wd, k, x.dtype):
            dw += gb[:, z0:z1].reshape(co, -1) @ buf.T
    return np.ascontiguousarray(dw.reshape(co, k, k, k, c).transpose(0, 4, 1, 2, 3))


def conv3d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1 "same" 3D convolution (cross-correlation) plus bias."""
    k = w.shape[2]
    if k not in (1, 3) or w.shape[2:] != (k, k, k):
        raise ValueError(f"unsupported kernel shape {w.shape[2:]}; only 1^3 and 3^3")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")
    out = _conv3d_raw(x.data, w.data)
    out += b.data.reshape(1, -1, 1, 1, 1)

    def backward(g):
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))
        if w.requires_grad:
            w.accumulate_grad(_conv3d_wgrad(x.data, g, k))
        if x.requires_grad:
            # dL/dx is the same conv with in/out channels swapped and the
            # kernel reversed along all spatial axes
            wt = np.ascontiguousarray(w.data[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
            x.accumulate_grad(_conv3d_raw(g, wt))

    return graph_node(out, (x, w, b), backward)


def maxpool3d(x: Tensor) -> Tensor:
    """2x2x2 max pooling, stride 2; gradient routes to the argmax voxel."""
    n, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise ValueError(f"maxpool3d needs even spatial dims, got {(d, h, w)}")
    d2, h2, w2 = d // 2, h // 2, w // 2
    blocks = (
        x.data.reshape(n, c, d2, 2, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, d2, h2, w2, 8)
    )
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if not x.requires_grad:
            return
        gb = np.zeros((n, c, d2, h2, w2, 8), dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = (
            gb.reshape(n, c, d2, h2, w2, 2, 2, 2)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(n, c, d, h, w)
        )
        x.accumulate_grad(gx)

    return graph_node(np.ascontiguousarray(out), (x,), backward)


def _upsample_coords(n: int):
    src = (np.arange(2 * n, dtype=np.float64) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, n - 1.0)
    if n == 1:
        return np.zeros(2, dtype=np.int64), np.zeros(2)
    i0 = np.minimum(np.floor(src).astype(np.int64), n - 2)
    return i0, src - i0


def _upsample_axis(a: np.ndarray, axis: int) -> np.ndarray:
    n = a.shape[axis]
    i0, t = _upsample_coords(n)
    i1 = np.minimum(i0 + 1, n - 1)
    shape = [1] * a.ndim
    shape[axis] = n * 2
    t = t.reshape(shape).astype(a.dtype)
    return np.take(a, i0, axis=axis) * (1 - t) + np.take(a, i1, axis=axis) * t


def _upsample_axis_grad(g: np.ndarray, axis: int, n_src: int) -> np.ndarray:
    """Exact transpose of the factor-2 interpolation: interior outputs mix
    neighbours with weights 1/4 and 3/4, the two edge outputs clamp."""
    gm = np.moveaxis(g, axis, 0)
    if n_src == 1:
        return np.moveaxis(gm.sum(axis=0, keepdims=True), 0, axis)
    q, tq = g.dtype.type(0.25), g.dtype.type(0.75)
    geven = gm[0::2]
    godd = gm[1::2]
    acc = np.zeros((n_src,) + gm.shape[1:], dtype=g.dtype)
    acc[0] += geven[0]
    acc[-1] += godd[-1]
    acc[1:] += tq * geven[1:]
    acc[:-1] += q * geven[1:]
    acc[:-1] += tq * godd[:-1]
    acc[1:] += q * godd[:-1]
    return np.moveaxis(acc, 0, axis)


def trilinear_upsample(x: Tensor) -> Tensor:
    """Double each spatial axis with half-pixel-center linear interpolation
    (edge-clamped); separable, so applied axis by axis."""
    n, c, d, h, w = x.shape
    out = x.data
    for axis in (2, 3, 4):
        out = _upsample_axis(out, axis)

    def backward(g):
        if not x.requires_grad:
            return
        for axis, n_src in ((4, w), (3, h), (2, d)):
            g = _upsample_axis_grad(g, axis, n_src)
        x.accumulate_grad(g)

    return graph_node(np.ascontiguousarray(out), (x,), backward)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) spatial standardization with learned scale/shift."""
    axes = (2, 3, 4)
    mean = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    istd = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x.data - mean) * istd
    gshape = (1, -1, 1, 1, 1)
    out = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

    def backward(g):
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))
        xh = (x.data - mean) * istd  # recomputed; cheaper than keeping it alive
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xh).sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(gshape)
            m1 = dxhat.mean(axis=axes, keepdims=True)
            m2 = (dxhat * xh).mean(axis=axes, keepdims=True)
            x.accumulate_grad(istd * (dxhat - m1 - xh * m2))

    return graph_node(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    return graph_node(out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Channel concatenation; `a` occupies the leading channels."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat spatial mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g[:, :ca])
        if b.requires_grad:
            b.accumulate_grad(g[:, ca:])

    return graph_node(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return graph_node(out, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    out = a.data * a.data.dtype.type(factor)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * a.data.dtype.type(factor))

    return graph_node(out, (a,), backward)


def softmax_channels(x: Tensor) -> Tensor:
    """Numerically stable softmax over the channel axis."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * p).sum(axis=1, keepdims=True)
            x.accumulate_grad(p * (g - dot))

    return graph_node(p, (x,), backward)
