"""U-Net backbone, the localization network, and the end-to-end composite.

The localizer is a U-Net whose pre-softmax output also feeds a strided-conv
downsampling branch (3x3 convs, stride 2, channels doubling up to 64) that
shrinks the map to <=4x4 before a stack of dense layers ending in 4 units;
a sigmoid maps those to normalized box coordinates. The composite crops the
input image with that box through the differentiable bilinear sampler and
hands the crop to a second, independent U-Net. At inference the ROI argmax
labels are remapped into the original frame by nearest neighbor, with
background outside the box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import BoxOutOfBounds, InvalidConfig, ShapeMismatch
from .grid import BoundingBox, LabelMask, PixelSpacing

_BRANCH_MAX_CHANNELS = 64
_BRANCH_TARGET = 4  # downsample until the feature map is at most this size


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 4
    base_filters: int = 16
    input_size: tuple[int, int] = (128, 128)
    classes: int = 3
    in_channels: int = 1

    def __post_init__(self):
        if self.levels < 2:
            raise InvalidConfig(f"levels must be >= 2, got {self.levels}")
        if self.base_filters < 4:
            raise InvalidConfig(f"base_filters must be >= 4, got {self.base_filters}")
        h, w = self.input_size
        step = 2 ** self.levels
        if h % step or w % step:
            raise InvalidConfig(f"input size {self.input_size} not divisible by 2^{self.levels}")
        if self.classes < 2 or self.in_channels < 1:
            raise InvalidConfig("classes must be >= 2 and in_channels >= 1")


@dataclass(frozen=True)
class LocalizerConfig:
    backbone: UNetConfig = field(default_factory=UNetConfig)
    head_units: tuple[int, ...] = (256, 64, 16, 4)
    mode: str = "mu"  # "mu" trains the auxiliary segmentation loss, "mo" does not

    def __post_init__(self):
        if not self.head_units or self.head_units[-1] != 4:
            raise InvalidConfig(f"head must end in 4 units, got {self.head_units}")
        if self.mode not in ("mo", "mu"):
            raise InvalidConfig(f"mode must be 'mo' or 'mu', got {self.mode!r}")
        if self.mode == "mu" and self.backbone.classes < 3:
            raise InvalidConfig("mu mode needs the 3-class backbone for its auxiliary loss")


@dataclass(frozen=True)
class LUNetConfig:
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    segmenter: UNetConfig = field(default_factory=UNetConfig)
    margin: float = 0.05
    crop_size: tuple[int, int] = (128, 128)

    def __post_init__(self):
        if self.margin < 0:
            raise InvalidConfig(f"margin must be >= 0, got {self.margin}")
        if tuple(self.segmenter.input_size) != tuple(self.crop_size):
            raise InvalidConfig(
                f"segmenter input {self.segmenter.input_size} must equal crop {self.crop_size}"
            )


# --- parameter construction ------------------------------------------------


def _uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(1.0 / fan_in)
    return dc.Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def _add_conv(params, rng, name, c_in, c_out, dtype, k=3):
    params[f"{name}.w"] = _uniform(rng, (c_out, c_in, k, k), c_in * k * k, dtype)
    params[f"{name}.b"] = _uniform(rng, (c_out,), c_in * k * k, dtype)


def _add_dense(params, rng, name, d_in, d_out, dtype):
    params[f"{name}.w"] = _uniform(rng, (d_out, d_in), d_in, dtype)
    params[f"{name}.b"] = _uniform(rng, (d_out,), d_in, dtype)


def _unet_params(config: UNetConfig, rng, dtype, params: dict, prefix: str = "") -> None:
    base, levels = config.base_filters, config.levels
    c_in = config.in_channels
    for i in range(levels):
        c_out = base * 2**i
        _add_conv(params, rng, f"{prefix}enc{i}.c1", c_in, c_out, dtype)
        _add_conv(params, rng, f"{prefix}enc{i}.c2", c_out, c_out, dtype)
        c_in = c_out
    mid = base * 2**levels
    _add_conv(params, rng, f"{prefix}mid.c1", c_in, mid, dtype)
    _add_conv(params, rng, f"{prefix}mid.c2", mid, mid, dtype)
    for i in reversed(range(levels)):
        c_out = base * 2**i
        up_in = base * 2 ** (i + 1) + c_out  # upsampled features + skip
        _add_conv(params, rng, f"{prefix}dec{i}.c1", up_in, c_out, dtype)
        _add_conv(params, rng, f"{prefix}dec{i}.c2", c_out, c_out, dtype)
    _add_conv(params, rng, f"{prefix}out", base, config.classes, dtype, k=1)


def _branch_plan(size: tuple[int, int], classes: int) -> list[tuple[int, int]]:
    # (c_in, c_out) per strided conv, halving the map until <= target size
    plan = []
    extent = max(size)
    c_in = classes
    c_out = 8
    while extent > _BRANCH_TARGET:
        plan.append((c_in, c_out))
        extent = -(-extent // 2)
        c_in = c_out
        c_out = min(_BRANCH_MAX_CHANNELS, c_out * 2)
    return plan


def _localizer_params(config: LocalizerConfig, rng, dtype, params: dict, prefix: str = "") -> None:
    _unet_params(config.backbone, rng, dtype, params, prefix)
    h, w = config.backbone.input_size
    plan = _branch_plan((h, w), config.backbone.classes)
    for i, (c_in, c_out) in enumerate(plan):
        _add_conv(params, rng, f"{prefix}rp{i}", c_in, c_out, dtype)
        h, w = -(-h // 2), -(-w // 2)
    d_in = h * w * (plan[-1][1] if plan else config.backbone.classes)
    for i, units in enumerate(config.head_units):
        _add_dense(params, rng, f"{prefix}head{i}", d_in, units, dtype)
        d_in = units


@dataclass
class UNetModel:
    config: UNetConfig
    params: dict

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()


@dataclass
class LocalizerModel:
    config: LocalizerConfig
    params: dict

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()


@dataclass
class LUNetModel:
    config: LUNetConfig
    params: dict  # "loc."-prefixed localizer params + "seg."-prefixed segmenter params

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def localizer(self) -> LocalizerModel:
        sub = {k[4:]: v for k, v in self.params.items() if k.startswith("loc.")}
        return LocalizerModel(self.config.localizer, sub)

    def segmenter(self) -> UNetModel:
        sub = {k[4:]: v for k, v in self.params.items() if k.startswith("seg.")}
        return UNetModel(self.config.segmenter, sub)


def build_unet(config: UNetConfig, rng_seed: int, dtype=np.float32) -> UNetModel:
    """Encoder/decoder U-Net with fan-in-scaled uniform initialization."""
    rng = np.random.default_rng(rng_seed)
    params: dict = {}
    _unet_params(config, rng, dtype, params)
    return UNetModel(config, params)


def build_localizer(config: LocalizerConfig, rng_seed: int, dtype=np.float32) -> LocalizerModel:
    rng = np.random.default_rng(rng_seed)
    params: dict = {}
    _localizer_params(config, rng, dtype, params)
    return LocalizerModel(config, params)


def build_lunet(config: LUNetConfig, rng_seed: int, dtype=np.float32) -> LUNetModel:
    """The two-network composite; localizer and segmenter share no storage."""
    rng = np.random.default_rng(rng_seed)
    params: dict = {}
    _localizer_params(config.localizer, rng, dtype, params, prefix="loc.")
    _unet_params(config.segmenter, rng, dtype, params, prefix="seg.")
    return LUNetModel(config, params)


# --- forward passes ---------------------------------------------------------


def _conv_block(params, prefix, x, stride=1):
    x = dc.relu(dc.conv2d(x, params[f"{prefix}.c1.w"], params[f"{prefix}.c1.b"], stride=stride))
    return dc.relu(dc.conv2d(x, params[f"{prefix}.c2.w"], params[f"{prefix}.c2.b"]))


def unet_logits(params: dict, x: dc.Tensor, config: UNetConfig, prefix: str = "") -> dc.Tensor:
    if x.shape[2:] != tuple(config.input_size) or x.shape[1] != config.in_channels:
        raise ShapeMismatch(f"input {x.shape} does not match config {config.input_size}")
    skips = []
    h = x
    for i in range(config.levels):
        h = _conv_block(params, f"{prefix}enc{i}", h)
        skips.append(h)
        h = dc.maxpool2d(h)
    h = _conv_block(params, f"{prefix}mid", h)
    for i in reversed(range(config.levels)):
        h = dc.nearest_upsample2x(h)
        h = dc.concat_channels(h, skips[i])
        h = _conv_block(params, f"{prefix}dec{i}", h)
    return dc.conv2d(h, params[f"{prefix}out.w"], params[f"{prefix}out.b"])


def unet_forward(model: UNetModel, x: dc.Tensor) -> dc.Tensor:
    """Class probabilities (N, classes, H, W)."""
    return dc.channel_softmax(unet_logits(model.params, x, model.config))


def localizer_forward(model: LocalizerModel, image: dc.Tensor):
    """(seg_probs, box) where box is a sigmoid-bounded [N,4] tensor."""
    return _localizer_forward(model.params, image, model.config)


def _localizer_forward(params, image, config: LocalizerConfig, prefix: str = ""):
    logits = unet_logits(params, image, config.backbone, prefix)
    probs = dc.channel_softmax(logits)
    h = logits
    plan = _branch_plan(config.backbone.input_size, config.backbone.classes)
    for i in range(len(plan)):
        h = dc.relu(dc.conv2d(h, params[f"{prefix}rp{i}.w"], params[f"{prefix}rp{i}.b"], stride=2))
    n = h.shape[0]
    h = dc.reshape(h, (n, -1))
    for i in range(len(config.head_units)):
        h = dc.dense(h, params[f"{prefix}head{i}.w"], params[f"{prefix}head{i}.b"])
        if i < len(config.head_units) - 1:
            h = dc.relu(h)
    return probs, dc.sigmoid(h)


@dataclass
class LUNetOut:
    """Everything the training loss and the evaluator need from one pass."""

    box: dc.Tensor  # raw sigmoid box coordinates [N,4]
    box_sane: np.ndarray  # sanitized box values [N,4] (no tape)
    crop: dc.Tensor  # [N,1,crop_h,crop_w]
    roi_probs: dc.Tensor  # [N,3,crop_h,crop_w]
    loc_probs: dc.Tensor  # localizer auxiliary segmentation probabilities
    label_maps: list  # per-item (H,W) int labels, present when remapped


def expand_box_norm(box: dc.Tensor, margin: float) -> dc.Tensor:
    """Push each side of a normalized [N,4] box out by margin * box extent.

    Runs on the tape, so gradients flow through the expansion; the crop
    sampler clamps the result to the frame afterwards.
    """
    x0 = dc.slice_axis(box, 1, 0, 1)
    x1 = dc.slice_axis(box, 1, 1, 2)
    y0 = dc.slice_axis(box, 1, 2, 3)
    y1 = dc.slice_axis(box, 1, 3, 4)
    mh = dc.mul(dc.sub(x1, x0), margin)
    mw = dc.mul(dc.sub(y1, y0), margin)
    return dc.concat(
        [dc.sub(x0, mh), dc.add(x1, mh), dc.sub(y0, mw), dc.add(y1, mw)], axis=1
    )


def lunet_forward(
    model: LUNetModel, image: dc.Tensor, remap: bool = True, force_boxes: np.ndarray | None = None
) -> LUNetOut:
    """Localize, crop, segment; optionally remap ROI labels to the frame.

    force_boxes replaces the predicted boxes in the crop pathway (the
    teacher-forced evaluation mode); the localizer still runs and its
    predictions are reported unchanged.
    """
    cfg = model.config
    n, _, h, w = image.shape
    ch, cw = cfg.crop_size
    loc_probs, box = _localizer_forward(model.params, image, cfg.localizer, prefix="loc.")
    if force_boxes is None:
        crop_box = expand_box_norm(box, cfg.margin) if cfg.margin > 0 else box
    else:
        crop_box = dc.Tensor(np.asarray(force_boxes, dtype=image.data.dtype))
    crop = dc.crop_resize(image, crop_box, ch, cw)
    roi_logits = unet_logits(model.params, crop, cfg.segmenter, prefix="seg.")
    roi_probs = dc.channel_softmax(roi_logits)
    box_sane = dc.sanitize_values(
        crop_box.data if crop_box.shape != (4,) else crop_box.data.reshape(1, 4), h, w
    )
    label_maps = []
    if remap:
        roi_labels = np.argmax(roi_probs.data, axis=1)
        for i in range(n):
            x0, x1, y0, y1 = box_sane[min(i, box_sane.shape[0] - 1)]
            pixel_box = BoundingBox(x0 * h, x1 * h, y0 * w, y1 * w)
            label_maps.append(remap_to_original(roi_labels[i], pixel_box, (h, w)).labels)
    return LUNetOut(box, box_sane, crop, roi_probs, loc_probs, label_maps)


def remap_to_original(
    roi_labels: np.ndarray,
    box: BoundingBox,
    out_size: tuple[int, int],
    spacing: PixelSpacing | None = None,
) -> LabelMask:
    """Map ROI labels back to the original frame; background outside the box.

    Each output pixel whose center falls inside the box reads its
    nearest-neighbor source in ROI coordinates, inverting the crop sampling.
    Spacing defaults to unit pixels when the caller has none to attach.
    """
    out_h, out_w = out_size
    if box.x_min < 0 or box.y_min < 0 or box.x_max > out_h or box.y_max > out_w:
        raise BoxOutOfBounds(f"box {box.as_tuple()} exceeds image {out_size}")
    roi_labels = np.asarray(roi_labels)
    ch, cw = roi_labels.shape
    rows = np.arange(out_h) + 0.5
    cols = np.arange(out_w) + 0.5
    inside_r = (rows >= box.x_min) & (rows < box.x_max)
    inside_c = (cols >= box.y_min) & (cols < box.y_max)
    src_r = np.clip(np.floor((rows - box.x_min) / box.h * ch).astype(np.int64), 0, ch - 1)
    src_c = np.clip(np.floor((cols - box.y_min) / box.w * cw).astype(np.int64), 0, cw - 1)
    out = np.zeros(out_size, dtype=np.int64)
    rsel = np.nonzero(inside_r)[0]
    csel = np.nonzero(inside_c)[0]
    out[np.ix_(rsel, csel)] = roi_labels[np.ix_(src_r[rsel], src_c[csel])]
    return LabelMask(out, spacing or PixelSpacing(1.0, 1.0))


def parameter_manifest(params: dict) -> list:
    return [(name, tuple(t.shape)) for name, t in params.items()]
