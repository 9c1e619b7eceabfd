"""Jittered finite-difference battery over every differentiable operation.

Each entry draws a fresh random configuration (shapes stay small so the
element-wise central differences stay cheap) and returns the worst relative
error from check_gradients. Inputs are kept a safe distance from the kinks
of piecewise operations (relu at 0, clamps at their boundaries, bilinear
sampling at integer pixel crossings): at a kink the analytic one-sided
derivative and the straddling finite difference legitimately disagree, so
landing there would test the draw, not the adjoint.

The full forward pass is checked end to end by perturbing a capped subset
of parameters from both networks; a localizer weight moved by the
segmentation branch of the loss proves gradient flows back through the
crop into the region proposal.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor, check_gradients
from .errors import InvalidConfig
from .losses import LossWeights, clipped_l1_loss, multiclass_dice_loss, multitask_loss
from .nets import (
    LocalizerConfig,
    LUNetConfig,
    UNetConfig,
    build_lunet,
    expand_box_norm,
    lunet_forward,
)

DEFAULT_TOL = 1e-4
COMPOSITE_TOL = 1e-3


def _param(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _signed(rng, shape, lo=0.1, hi=1.0):
    """Values with |x| in [lo, hi]: keeps abs/relu/division off their kinks."""
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], size=shape)


def _wsum(out, w):
    return dc.reduce_sum(dc.mul(out, w))


def _other_shape(rng, shape):
    # binary ops support equal shapes or a scalar operand, nothing between
    return shape if rng.uniform() < 0.7 else (1,)


def _check_add(rng):
    a = _param(rng, (2, 3, 4))
    b = _param(rng, _other_shape(rng, (2, 3, 4)))
    w = rng.standard_normal((2, 3, 4))
    return check_gradients(lambda a, b: _wsum(dc.add(a, b), w), [a, b])


def _check_sub(rng):
    a = _param(rng, (2, 3, 4))
    b = _param(rng, _other_shape(rng, (2, 3, 4)))
    w = rng.standard_normal((2, 3, 4))
    return check_gradients(lambda a, b: _wsum(dc.sub(a, b), w), [a, b])


def _check_mul(rng):
    a = _param(rng, (2, 3, 4))
    b = _param(rng, _other_shape(rng, (2, 3, 4)))
    return check_gradients(lambda a, b: dc.reduce_sum(dc.mul(a, b)), [a, b])


def _check_div(rng):
    a = _param(rng, (2, 3, 4))
    b = Tensor(_signed(rng, _other_shape(rng, (2, 3, 4)), lo=0.5, hi=1.5),
               requires_grad=True)
    return check_gradients(lambda a, b: dc.reduce_sum(dc.div(a, b)), [a, b])


def _check_absolute(rng):
    a = Tensor(_signed(rng, (3, 5)), requires_grad=True)
    w = rng.standard_normal((3, 5))
    return check_gradients(lambda a: _wsum(dc.absolute(a), w), [a])


def _check_maximum(rng):
    a = _param(rng, (2, 4))
    b = Tensor(a.data + _signed(rng, (2, 4)), requires_grad=True)
    w = rng.standard_normal((2, 4))
    return check_gradients(lambda a, b: _wsum(dc.maximum(a, b), w), [a, b])


def _check_minimum(rng):
    a = _param(rng, (2, 4))
    b = Tensor(a.data + _signed(rng, (2, 4)), requires_grad=True)
    w = rng.standard_normal((2, 4))
    return check_gradients(lambda a, b: _wsum(dc.minimum(a, b), w), [a, b])


def _check_relu(rng):
    a = Tensor(_signed(rng, (2, 3, 4)), requires_grad=True)
    w = rng.standard_normal((2, 3, 4))
    return check_gradients(lambda a: _wsum(dc.relu(a), w), [a])


def _check_sigmoid(rng):
    a = _param(rng, (3, 4), lo=-3.0, hi=3.0)
    w = rng.standard_normal((3, 4))
    return check_gradients(lambda a: _wsum(dc.sigmoid(a), w), [a])


def _reduce_check(rng, op):
    a = _param(rng, (2, 3, 4))
    pick = int(rng.integers(0, 4))
    axes = None if pick == 3 else pick
    probe = op(Tensor(a.data), axes=axes)
    w = rng.standard_normal(probe.shape)
    return check_gradients(lambda a: _wsum(op(a, axes=axes), w), [a])


def _check_reduce_sum(rng):
    return _reduce_check(rng, dc.reduce_sum)


def _check_reduce_mean(rng):
    return _reduce_check(rng, dc.reduce_mean)


def _check_reshape(rng):
    a = _param(rng, (2, 3, 4))
    w = rng.standard_normal((4, 6))
    return check_gradients(lambda a: _wsum(dc.reshape(a, (4, 6)), w), [a])


def _check_slice_axis(rng):
    a = _param(rng, (2, 5, 3))
    axis = int(rng.integers(0, 3))
    start = int(rng.integers(0, a.shape[axis] - 1))
    stop = int(rng.integers(start + 1, a.shape[axis] + 1))
    probe = dc.slice_axis(Tensor(a.data), axis, start, stop)
    w = rng.standard_normal(probe.shape)
    return check_gradients(lambda a: _wsum(dc.slice_axis(a, axis, start, stop), w), [a])


def _check_concat(rng):
    axis = int(rng.integers(0, 2))
    shapes = [(2, 3), (2, 3), (2, 3)]
    parts = [_param(rng, s) for s in shapes]
    w = rng.standard_normal(np.concatenate([p.data for p in parts], axis=axis).shape)
    return check_gradients(lambda *ts: _wsum(dc.concat(list(ts), axis), w), parts)


def _check_concat_channels(rng):
    a, b = _param(rng, (2, 3, 4, 5)), _param(rng, (2, 2, 4, 5))
    w = rng.standard_normal((2, 5, 4, 5))
    return check_gradients(lambda a, b: _wsum(dc.concat_channels(a, b), w), [a, b])


def _check_dense(rng):
    x, w_, b = _param(rng, (3, 5)), _param(rng, (4, 5)), _param(rng, (4,))
    w = rng.standard_normal((3, 4))
    return check_gradients(
        lambda x, w_, b: _wsum(dc.sigmoid(dc.dense(x, w_, b)), w), [x, w_, b]
    )


def _check_conv2d(rng):
    stride = int(rng.integers(1, 3))
    x = _param(rng, (1, 2, 6, 6))
    k = _param(rng, (3, 2, 3, 3), lo=-0.5, hi=0.5)
    b = _param(rng, (3,))
    probe = dc.conv2d(Tensor(x.data), Tensor(k.data), Tensor(b.data), stride=stride)
    w = rng.standard_normal(probe.shape)
    return check_gradients(
        lambda x, k, b: _wsum(dc.sigmoid(dc.conv2d(x, k, b, stride=stride)), w), [x, k, b]
    )


def _check_maxpool2d(rng):
    # a scaled permutation keeps every pooling window free of near-ties
    vals = rng.permutation(2 * 3 * 6 * 6).astype(np.float64)
    vals *= 0.031 * rng.uniform(0.5, 1.5)
    x = Tensor(vals.reshape(2, 3, 6, 6), requires_grad=True)
    w = rng.standard_normal((2, 3, 3, 3))
    return check_gradients(lambda x: _wsum(dc.maxpool2d(x), w), [x])


def _check_nearest_upsample2x(rng):
    x = _param(rng, (2, 3, 3, 4))
    w = rng.standard_normal((2, 3, 6, 8))
    return check_gradients(lambda x: _wsum(dc.nearest_upsample2x(x), w), [x])


def _check_channel_softmax(rng):
    x = _param(rng, (2, 3, 4, 4), lo=-2.0, hi=2.0)
    w = rng.standard_normal((2, 3, 4, 4))
    return check_gradients(lambda x: _wsum(dc.channel_softmax(x), w), [x])


def _crop_samples(box, extent, out_size):
    frac = (np.arange(out_size) + 0.5) / out_size
    b0, b1 = box[..., 0, None], box[..., 1, None]
    return (b0 * (1.0 - frac) + b1 * frac) * extent - 0.5


def _check_crop_resize(rng, size=12, out=5, tol=5e-4):
    image = _param(rng, (2, 1, size, size))
    for _ in range(200):
        vals = np.sort(rng.uniform(0.05, 0.95, (2, 2, 2)), axis=-1)
        vals[..., 1] = np.maximum(vals[..., 1], vals[..., 0] + 0.25)
        box = vals.reshape(2, 4)  # rows: (x0,x1), (y0,y1) per item
        coords = np.concatenate([
            _crop_samples(box[:, 0:2], size, out).ravel(),
            _crop_samples(box[:, 2:4], size, out).ravel(),
        ])
        if np.abs(coords - np.round(coords)).min() > tol:
            break
    else:
        raise InvalidConfig("could not draw a crop box away from pixel boundaries")
    box_t = Tensor(box, requires_grad=True)
    w = rng.standard_normal((2, 1, out, out))
    return check_gradients(
        lambda img, b: _wsum(dc.crop_resize(img, b, out, out), w), [image, box_t]
    )


def _sanitize_kink_distance(vals, in_h, in_w):
    """Smallest |argument difference| over every max/min inside sanitize_box.

    A coordinate pinned at 0 or 1 by the clamp makes the later center-shift
    arguments coincide identically, with equal derivatives on both arms;
    those exact ties are smooth plateaus, not kinks, and are skipped.
    """
    dists = [np.abs(vals).min(), np.abs(vals - 1.0).min()]
    b = np.clip(vals, 0.0, 1.0)
    for lo_col, hi_col, min_ext in ((0, 1, 2.0 / in_h), (2, 3, 2.0 / in_w)):
        p, q = b[:, lo_col], b[:, hi_col]
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        tie = np.abs(p - q)
        dists.append(np.where(tie == 0.0, np.inf, tie).min())
        dists.append(np.abs((hi - lo) - min_ext).min())
        center = (lo + hi) * 0.5
        half = np.maximum((hi - lo) * 0.5, min_ext / 2.0)
        d_top = np.abs(center - (1.0 - half))
        dists.append(np.where(hi == 1.0, np.inf, d_top).min())
        d_bot = np.abs(np.minimum(center, 1.0 - half) - half)
        dists.append(np.where(lo == 0.0, np.inf, d_bot).min())
    return min(dists)


def _check_sanitize_box(rng, in_h=64, in_w=48, tol=0.01):
    for _ in range(200):
        vals = rng.uniform(-0.3, 1.3, (2, 4))
        if _sanitize_kink_distance(vals, in_h, in_w) > tol:
            break
    else:
        raise InvalidConfig("could not draw a box away from sanitize breakpoints")
    box = Tensor(vals, requires_grad=True)
    w = rng.standard_normal((2, 4))
    return check_gradients(lambda b: _wsum(dc.sanitize_box(b, in_h, in_w), w), [box])


def _check_expand_box_norm(rng):
    margin = float(rng.uniform(0.02, 0.3))
    box = _param(rng, (2, 4), lo=0.1, hi=0.9)
    w = rng.standard_normal((2, 4))
    return check_gradients(lambda b: _wsum(expand_box_norm(b, margin), w), [box])


def _check_clipped_l1(rng):
    clip = 0.99
    pred = _param(rng, (3, 4))
    # half the configs exercise the clipped (zero-gradient) branch
    lo, hi = (0.05, 0.9) if rng.uniform() < 0.5 else (1.05, 1.5)
    ref = pred.data - _signed(rng, (3, 4), lo=lo, hi=hi)
    per_coord = bool(rng.integers(0, 2)) or lo > 1.0
    return check_gradients(
        lambda p: clipped_l1_loss(p, ref, clip=clip, per_coordinate=per_coord), [pred]
    )


def _check_multiclass_dice(rng):
    logits = _param(rng, (2, 3, 6, 6), lo=-2.0, hi=2.0)
    labels = rng.integers(0, 3, (2, 6, 6))
    smooth = float(rng.uniform(0.5, 2.0))
    return check_gradients(
        lambda z: multiclass_dice_loss(dc.channel_softmax(z), labels, smooth=smooth),
        [logits],
    )


def _check_multitask(rng):
    a, b = _param(rng, (1,)), _param(rng, (1,))
    weights = LossWeights(
        localization_weight=float(rng.uniform(1.0, 20.0)),
        segmentation_weight=float(rng.uniform(0.5, 2.0)),
    )
    return check_gradients(
        lambda a, b: multitask_loss(dc.reduce_sum(a), dc.reduce_sum(b), weights), [a, b]
    )


_COMPOSITE_CONFIG = LUNetConfig(
    localizer=LocalizerConfig(
        backbone=UNetConfig(levels=2, base_filters=4, input_size=(16, 16), classes=2),
        head_units=(8, 4),
    ),
    segmenter=UNetConfig(levels=2, base_filters=4, input_size=(8, 8), classes=3),
    margin=0.1,
    crop_size=(8, 8),
)
# spans both networks and the output layers; ~120 elements keeps FD cheap
_COMPOSITE_PROBES = (
    "loc.enc0.c1.w", "loc.head1.w", "loc.out.b",
    "seg.enc0.c1.w", "seg.out.w", "seg.out.b",
)


def _check_lunet_forward(rng):
    model = build_lunet(_COMPOSITE_CONFIG, rng_seed=int(rng.integers(0, 2**31)),
                        dtype=np.float64)
    image = Tensor(rng.uniform(0.0, 1.0, (1, 1, 16, 16)))
    # |error| stays in (0.2, 1.5), clear of both the abs kink and the clip
    ref_box = rng.uniform(1.2, 1.5, (1, 4))
    ref_labels = rng.integers(0, 3, (1, 8, 8))
    weights = LossWeights()

    def fn(*_params):
        out = lunet_forward(model, image, remap=False)
        loc = clipped_l1_loss(out.box, ref_box, clip=5.0)
        seg = multiclass_dice_loss(out.roi_probs, ref_labels)
        return multitask_loss(loc, seg, weights)

    probes = [model.params[name] for name in _COMPOSITE_PROBES]
    return check_gradients(fn, probes)


SUITE = {
    "add": _check_add,
    "sub": _check_sub,
    "mul": _check_mul,
    "div": _check_div,
    "absolute": _check_absolute,
    "maximum": _check_maximum,
    "minimum": _check_minimum,
    "relu": _check_relu,
    "sigmoid": _check_sigmoid,
    "reduce_sum": _check_reduce_sum,
    "reduce_mean": _check_reduce_mean,
    "reshape": _check_reshape,
    "slice_axis": _check_slice_axis,
    "concat": _check_concat,
    "concat_channels": _check_concat_channels,
    "dense": _check_dense,
    "conv2d": _check_conv2d,
    "maxpool2d": _check_maxpool2d,
    "nearest_upsample2x": _check_nearest_upsample2x,
    "channel_softmax": _check_channel_softmax,
    "crop_resize": _check_crop_resize,
    "sanitize_box": _check_sanitize_box,
    "expand_box_norm": _check_expand_box_norm,
    "clipped_l1_loss": _check_clipped_l1,
    "multiclass_dice_loss": _check_multiclass_dice,
    "multitask_loss": _check_multitask,
    "lunet_forward": _check_lunet_forward,
}


def tolerance_for(name: str) -> float:
    return COMPOSITE_TOL if name == "lunet_forward" else DEFAULT_TOL


def run_suite(names=None, configs: int = 20, seed: int = 0) -> dict:
    """Max relative error per op over `configs` jittered draws each."""
    chosen = list(SUITE) if names is None else list(names)
    unknown = [n for n in chosen if n not in SUITE]
    if unknown:
        raise InvalidConfig(f"unknown gradient-check ops: {unknown}")
    results = {}
    for name in chosen:
        rng = np.random.default_rng(np.random.SeedSequence([seed, list(SUITE).index(name)]))
        results[name] = max(SUITE[name](rng) for _ in range(configs))
    return results
