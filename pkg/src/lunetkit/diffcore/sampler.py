"""Differentiable bilinear crop-and-resize driven by normalized boxes.

Sampling convention: a normalized box (x0, x1, y0, y1) spans the pixel
interval [x0*H, x1*H) x [y0*W, y1*W); output pixel (i, j) samples the
source at the center of its cell inside the box, i.e. at

    X = (x0 + (i + 0.5)/out_h * (x1 - x0)) * H - 0.5

in pixel-index space (pixel p has its center at index p). With the full
box and matching output size this lands exactly on the input pixels, so
the op is the exact identity there. Reads outside the image are zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import OutputTooSmall, ShapeMismatch
from .tensor import Tensor, _as_tensor, _emit, concat, maximum, minimum, reshape, slice_axis


@dataclass(frozen=True)
class NormalizedBox:
    """Box coordinates as fractions of image extent, in [0,1] after sanitize."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite box {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.x_max, self.y_min, self.y_max], dtype=np.float64)


def _box_tensor(box, dtype) -> Tensor:
    if isinstance(box, NormalizedBox):
        box = Tensor(box.as_array().astype(dtype))
    box = _as_tensor(box)
    if box.shape == (4,):
        return reshape(box, (1, 4))
    if len(box.shape) == 2 and box.shape[1] == 4:
        return box
    raise ShapeMismatch(f"box must be a 4-vector or [N,4] tensor, got {box.shape}")


def sanitize_box(box, in_h: int, in_w: int) -> Tensor:
    """Clamp to [0,1], reorder min<=max, inflate to the 2-pixel minimum extent.

    Built from differentiable primitives, so gradients flow through the
    clamp/reorder in their linear regions; degenerate predictions early in
    training stay usable without killing the gradient signal.
    """
    b = _box_tensor(box, np.float64)
    b = minimum(maximum(b, 0.0), 1.0)
    out_pairs = []
    for lo_col, hi_col, min_ext in ((0, 1, 2.0 / in_h), (2, 3, 2.0 / in_w)):
        p = slice_axis(b, 1, lo_col, lo_col + 1)
        q = slice_axis(b, 1, hi_col, hi_col + 1)
        lo = minimum(p, q)
        hi = maximum(p, q)
        center = (lo + hi) * 0.5
        half = maximum((hi - lo) * 0.5, min_ext / 2.0)
        center = maximum(minimum(center, 1.0 - half), half)
        out_pairs.extend([center - half, center + half])
    return concat(out_pairs, axis=1)


def _axis_samples(b0, b1, extent, out_size):
    # fractional cell centers along one axis, mapped into pixel-index space
    frac = (np.arange(out_size) + 0.5) / out_size
    coords = (b0[:, None] * (1.0 - frac) + b1[:, None] * frac) * extent - 0.5
    base = np.floor(coords)
    weight = coords - base
    return base.astype(np.int64), weight, frac


def crop_resize(image: Tensor, box, out_h: int, out_w: int) -> Tensor:
    """Bilinear crop-and-resize, differentiable in the image and the box."""
    if out_h < 2 or out_w < 2:
        raise OutputTooSmall(f"output must be at least 2x2, got {out_h}x{out_w}")
    image = _as_tensor(image)
    if len(image.shape) != 4:
        raise ShapeMismatch(f"crop_resize needs NCHW, got {image.shape}")
    n, c, h, w = image.shape
    raw = _box_tensor(box, image.dtype)
    if raw.shape[0] not in (1, n):
        raise ShapeMismatch(f"{raw.shape[0]} boxes for batch of {n}")
    boxes = sanitize_box(raw, h, w)

    bvals = boxes.data
    bidx = np.arange(n) if bvals.shape[0] == n else np.zeros(n, dtype=np.int64)
    r0, wr, fx = _axis_samples(bvals[bidx, 0], bvals[bidx, 1], h, out_h)  # [N,oh]
    c0, wc, fy = _axis_samples(bvals[bidx, 2], bvals[bidx, 3], w, out_w)  # [N,ow]

    def gather(ri, ci):
        # zero-padded read of image corners; ri [N,oh], ci [N,ow]
        rv = (ri >= 0) & (ri < h)
        cv = (ci >= 0) & (ci < w)
        vals = image.data[
            np.arange(n)[:, None, None, None],
            np.arange(c)[None, :, None, None],
            np.clip(ri, 0, h - 1)[:, None, :, None],
            np.clip(ci, 0, w - 1)[:, None, None, :],
        ]
        vals *= (rv[:, None, :, None] & cv[:, None, None, :])
        return vals

    i00 = gather(r0, c0)
    i01 = gather(r0, c0 + 1)
    i10 = gather(r0 + 1, c0)
    i11 = gather(r0 + 1, c0 + 1)
    a_r = wr[:, None, :, None]
    a_c = wc[:, None, None, :]
    out = Tensor(
        (1 - a_r) * ((1 - a_c) * i00 + a_c * i01) + a_r * ((1 - a_c) * i10 + a_c * i11)
    )

    def pull(g):
        if image.requires_grad:
            dimg = np.zeros_like(image.data, dtype=g.dtype)
            for ri, ci, wgt in (
                (r0, c0, (1 - a_r) * (1 - a_c)),
                (r0, c0 + 1, (1 - a_r) * a_c),
                (r0 + 1, c0, a_r * (1 - a_c)),
                (r0 + 1, c0 + 1, a_r * a_c),
            ):
                rv = (ri >= 0) & (ri < h)
                cv = (ci >= 0) & (ci < w)
                contrib = g * wgt * (rv[:, None, :, None] & cv[:, None, None, :])
                np.add.at(
                    dimg,
                    (
                        np.arange(n)[:, None, None, None],
                        np.arange(c)[None, :, None, None],
                        np.clip(ri, 0, h - 1)[:, None, :, None],
                        np.clip(ci, 0, w - 1)[:, None, None, :],
                    ),
                    contrib,
                )
            image.accumulate(dimg)
        if boxes.requires_grad:
            d_wr = ((1 - a_c) * (i10 - i00) + a_c * (i11 - i01)) * g  # [N,C,oh,ow]
            d_wc = ((1 - a_r) * (i01 - i00) + a_r * (i11 - i10)) * g
            dX = d_wr.sum(axis=(1, 3))  # [N,oh]
            dY = d_wc.sum(axis=(1, 2))  # [N,ow]
            db_items = np.stack(
                [
                    (dX * (1.0 - fx)[None, :]).sum(axis=1) * h,
                    (dX * fx[None, :]).sum(axis=1) * h,
                    (dY * (1.0 - fy)[None, :]).sum(axis=1) * w,
                    (dY * fy[None, :]).sum(axis=1) * w,
                ],
                axis=1,
            )  # [N,4]
            if bvals.shape[0] == n:
                boxes.accumulate(db_items)
            else:
                boxes.accumulate(db_items.sum(axis=0, keepdims=True))

    return _emit(out, (image, boxes), pull)


def sanitize_values(box_vals, in_h: int, in_w: int) -> np.ndarray:
    """Plain-array sanitization; same math as sanitize_box, no tape."""
    return sanitize_box(Tensor(np.asarray(box_vals, dtype=np.float64)), in_h, in_w).data


def nearest_resample(labels: np.ndarray, box_vals, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resample of an integer label map into a sanitized box.

    Shares the crop_resize sampling geometry so resampled references line up
    with the bilinear crop. Reads outside the image are background (0).
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    b = sanitize_values(np.asarray(box_vals, dtype=np.float64).reshape(1, 4), h, w)[0]
    r0, wr, _ = _axis_samples(b[0:1], b[1:2], h, out_h)
    c0, wc, _ = _axis_samples(b[2:3], b[3:4], w, out_w)
    rn = (r0 + np.floor(wr + 0.5).astype(np.int64))[0]
    cn = (c0 + np.floor(wc + 0.5).astype(np.int64))[0]
    out = np.zeros((out_h, out_w), dtype=labels.dtype)
    rv = (rn >= 0) & (rn < h)
    cv = (cn >= 0) & (cn < w)
    out[np.ix_(rv, cv)] = labels[np.ix_(rn[rv], cn[cv])]
    return out
