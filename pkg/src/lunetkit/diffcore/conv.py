"""Convolution, pooling, and upsampling layers for NCHW tensors.

conv2d lowers each window offset to a strided view and reduces the whole
convolution to one batched matmul (im2col); the backward pass recomputes
the column buffer from the saved input instead of keeping it alive, which
caps tape memory at roughly one activation per layer.
"""

from __future__ import annotations

import numpy as np

from ..errors import OddSpatialDim, ShapeMismatch
from .tensor import Tensor, _as_tensor, _emit


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    # asymmetric "same" padding: output size = ceil(size / stride)
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return lo, total - lo


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xp[
                :, :, di : di + oh * stride : stride, dj : dj + ow * stride : stride
            ]
    return cols.reshape(n, c * k * k, oh * ow)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlation with zero "same" padding; stride > 1 downsamples."""
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if len(x.shape) != 4 or len(kernel.shape) != 4:
        raise ShapeMismatch(f"conv2d needs NCHW input and FCkk kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeMismatch(f"kernel must be square with odd size, got {kh}x{kw}")
    if ck != c or bias.shape != (f,):
        raise ShapeMismatch(f"conv2d shapes x{x.shape} k{kernel.shape} b{bias.shape}")

    pt, pb = _same_pads(h, kh, stride)
    pl, pr = _same_pads(w, kw, stride)
    oh = -(-h // stride)
    ow = -(-w // stride)

    def padded(a: np.ndarray) -> np.ndarray:
        return np.pad(a, ((0, 0), (0, 0), (pt, pb), (pl, pr)))

    cols = _im2col(padded(x.data), kh, stride, oh, ow)
    w2 = kernel.data.reshape(f, c * kh * kw)
    out_flat = np.matmul(w2[None], cols)  # (N, F, oh*ow)
    out = Tensor(out_flat.reshape(n, f, oh, ow) + bias.data[None, :, None, None])

    def pull(g):
        gf = g.reshape(n, f, oh * ow)
        if bias.requires_grad:
            bias.accumulate(gf.sum(axis=(0, 2)))
        need_cols = kernel.requires_grad
        cols_b = _im2col(padded(x.data), kh, stride, oh, ow) if need_cols else None
        if kernel.requires_grad:
            gw = np.matmul(gf, cols_b.transpose(0, 2, 1)).sum(axis=0)
            kernel.accumulate(gw.reshape(kernel.shape))
        if x.requires_grad:
            dcols = np.matmul(w2.T[None], gf).reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros((n, c, h + pt + pb, w + pl + pr), dtype=g.dtype)
            for di in range(kh):
                for dj in range(kw):
                    dxp[
                        :, :, di : di + oh * stride : stride, dj : dj + ow * stride : stride
                    ] += dcols[:, :, di, dj]
            x.accumulate(dxp[:, :, pt : pt + h, pl : pl + w])

    return _emit(out, (x, kernel, bias), pull)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; gradient routes to the first argmax."""
    x = _as_tensor(x)
    if len(x.shape) != 4:
        raise ShapeMismatch(f"maxpool2d needs NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddSpatialDim(f"spatial dims must be even, got {h}x{w}")
    oh, ow = h // 2, w // 2
    windows = (
        x.data.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    )
    arg = windows.argmax(axis=-1)
    out = Tensor(np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0])

    def pull(g):
        if x.requires_grad:
            gw = np.zeros((n, c, oh, ow, 4), dtype=g.dtype)
            np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
            x.accumulate(
                gw.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            )

    return _emit(out, (x,), pull)


def nearest_upsample2x(x: Tensor) -> Tensor:
    """Replicate each value into a 2x2 block."""
    x = _as_tensor(x)
    if len(x.shape) != 4:
        raise ShapeMismatch(f"nearest_upsample2x needs NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3))

    def pull(g):
        if x.requires_grad:
            x.accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _emit(out, (x,), pull)
