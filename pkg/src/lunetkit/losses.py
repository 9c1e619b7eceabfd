"""Training losses: clipped L1 box regression, multi-class soft Dice over
the two foreground classes, the dynamically resampled ROI reference, and
the weighted multi-task sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ShapeMismatch
from .grid import LabelMask


@dataclass(frozen=True)
class LossWeights:
    localization_weight: float = 10.0
    segmentation_weight: float = 1.0
    clip: float = 0.99
    smooth: float = 1.0  # Dice epsilon, in pixel-count units
    # the published description is ambiguous between clipping each coordinate
    # and clipping the summed error; per-coordinate is the default reading
    clip_per_coordinate: bool = True

    def __post_init__(self):
        if self.localization_weight <= 0 or self.segmentation_weight <= 0 or self.smooth <= 0:
            raise ValueError("weights and smoothing must be positive")
        if not 0.0 < self.clip <= 1.0:
            raise ValueError(f"clip must be in (0,1], got {self.clip}")


def _as_box_tensor(box) -> dc.Tensor:
    if isinstance(box, dc.NormalizedBox):
        return dc.Tensor(box.as_array())
    if isinstance(box, dc.Tensor):
        return box
    return dc.Tensor(np.asarray(box, dtype=np.float64))


def clipped_l1_loss(pred_box, ref_box, clip: float = 0.99, per_coordinate: bool = True) -> dc.Tensor:
    """Sum over the 4 box values of min(|pred - ref|, clip), batch-averaged.

    Zero gradient where a coordinate error is clipped. per_coordinate=False
    instead clips the summed error once (the alternative reading).
    """
    pred = _as_box_tensor(pred_box)
    ref = _as_box_tensor(ref_box)
    if pred.shape != ref.shape:
        raise ShapeMismatch(f"box shapes {pred.shape} vs {ref.shape}")
    err = dc.absolute(pred - ref)
    batch = pred.shape[0] if len(pred.shape) == 2 else 1
    if per_coordinate:
        total = dc.reduce_sum(dc.minimum(err, clip))
    else:
        per_item = dc.reduce_sum(err, axes=-1 if len(pred.shape) == 2 else None)
        total = dc.reduce_sum(dc.minimum(per_item, clip))
    return total * (1.0 / batch)


def _labels_array(ref) -> np.ndarray:
    if isinstance(ref, LabelMask):
        return ref.labels[None]
    if isinstance(ref, (list, tuple)):
        return np.stack([m.labels if isinstance(m, LabelMask) else np.asarray(m) for m in ref])
    arr = np.asarray(ref)
    return arr[None] if arr.ndim == 2 else arr


def multiclass_dice_loss(probs: dc.Tensor, ref, smooth: float = 1.0) -> dc.Tensor:
    """1 - mean soft Dice over classes {1, 2}; background is excluded.

    ref may be a LabelMask, a list of them, or an (N,h,w) label array; it is
    one-hot encoded as a constant, so no gradient flows into the reference.
    """
    labels = _labels_array(ref)
    n, c, h, w = probs.shape
    if labels.shape != (n, h, w):
        raise ShapeMismatch(f"probs {probs.shape} vs labels {labels.shape}")
    dice_terms = []
    for cls in (1, 2):
        onehot = (labels == cls).astype(probs.dtype)
        p = dc.slice_axis(probs, 1, cls, cls + 1)
        inter = dc.reduce_sum(p * dc.Tensor(onehot[:, None]))
        sums = dc.reduce_sum(p) + float(onehot.sum())
        dice_terms.append((inter * 2.0 + smooth) / (sums + smooth))
    return 1.0 - (dice_terms[0] + dice_terms[1]) * 0.5


def dynamic_roi_reference(ref: LabelMask, box, crop_size: tuple[int, int]) -> LabelMask:
    """Reference labels resampled into the (sanitized) predicted ROI.

    Nearest-neighbor on purpose: the result is a categorical target and no
    gradient flows through it.
    """
    vals = box.as_array() if isinstance(box, dc.NormalizedBox) else np.asarray(
        box.data if isinstance(box, dc.Tensor) else box, dtype=np.float64
    )
    resampled = dc.nearest_resample(ref.labels, vals.reshape(-1)[:4], crop_size[0], crop_size[1])
    return LabelMask(resampled, ref.spacing)


def multitask_loss(loc_loss: dc.Tensor, seg_loss: dc.Tensor, weights: LossWeights) -> dc.Tensor:
    """localization_weight * loc + segmentation_weight * seg."""
    return loc_loss * weights.localization_weight + seg_loss * weights.segmentation_weight
