"""Adam training of the two-stage model with early stopping.

One view-agnostic model consumes every (view, instant) image of the
training patients. Each step minimizes the multi-task loss: clipped L1 on
the normalized tight box plus soft Dice on the ROI crop against a
reference resampled into the predicted (margin-expanded) box. When the
localizer runs in "mu" mode its full-frame probabilities pick up an
auxiliary Dice term against the uncropped reference masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..errors import DivergedLoss, EmptyDataset, InvalidConfig
from ..grid import LabelMask
from ..losses import (
    LossWeights,
    clipped_l1_loss,
    dynamic_roi_reference,
    multiclass_dice_loss,
    multitask_loss,
)
from ..nets import LUNetModel, lunet_forward
from ..phantom import INSTANTS, VIEWS

MONITORS = ("multitask", "segmentation")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4  # the studied settings are 1e-3 and 1e-4
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 20
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    val_fraction: float = 0.1  # used where no explicit validation fold exists
    monitor: str = "multitask"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience < 1:
            raise InvalidConfig(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise InvalidConfig("batch_size must be >= 1 and max_epochs >= 0")
        if not 0 < self.val_fraction < 1:
            raise InvalidConfig(f"val_fraction must lie in (0,1), got {self.val_fraction}")
        if self.monitor not in MONITORS:
            raise InvalidConfig(f"monitor must be one of {MONITORS}, got {self.monitor!r}")

    def to_dict(self) -> dict:
        w = self.weights
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "val_fraction": self.val_fraction,
            "monitor": self.monitor,
            "weights": {
                "localization_weight": w.localization_weight,
                "segmentation_weight": w.segmentation_weight,
                "clip": w.clip,
                "smooth": w.smooth,
                "clip_per_coordinate": w.clip_per_coordinate,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        weights = LossWeights(**d.pop("weights", {}))
        return cls(weights=weights, **d)


@dataclass
class TrainHistory:
    train: list  # mean batch loss per epoch (epoch 1..stopped_epoch)
    val: list  # monitored validation loss; index 0 is the pre-training value
    best_epoch: int  # 0 means the initial parameters were best
    stopped_epoch: int
    monitor: str


@dataclass(frozen=True)
class Sample:
    patient_id: str
    view: str
    instant: str
    image: np.ndarray  # (1, H, W) float32
    mask: LabelMask
    ref_box: np.ndarray  # (4,) normalized [x_min, x_max, y_min, y_max] float32


def make_samples(records) -> list[Sample]:
    """Flatten patients into per-acquisition training samples."""
    samples = []
    for rec in records:
        for view in VIEWS:
            for instant in INSTANTS:
                key = (view, instant)
                mask = rec.masks[key]
                h, w = mask.labels.shape
                bb = rec.boxes[key]
                samples.append(Sample(
                    rec.patient_id, view, instant,
                    rec.images[key].pixels.astype(np.float32)[None],
                    mask,
                    np.array([bb.x_min / h, bb.x_max / h, bb.y_min / w, bb.y_max / w],
                             dtype=np.float32),
                ))
    return samples


class Adam:
    """Adam with bias correction; skips parameters without gradients."""

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def _losses_for(model: LUNetModel, batch: list[Sample], weights: LossWeights):
    imgs = np.stack([s.image for s in batch])
    refs = np.stack([s.ref_box for s in batch])
    out = lunet_forward(model, dc.Tensor(imgs), remap=False)
    loc = clipped_l1_loss(out.box, dc.Tensor(refs), clip=weights.clip,
                          per_coordinate=weights.clip_per_coordinate)
    crop_size = model.config.crop_size
    rois = [dynamic_roi_reference(s.mask, out.box_sane[i], crop_size)
            for i, s in enumerate(batch)]
    seg = multiclass_dice_loss(out.roi_probs, rois, smooth=weights.smooth)
    if model.config.localizer.mode == "mu":
        aux = multiclass_dice_loss(out.loc_probs, [s.mask for s in batch],
                                   smooth=weights.smooth)
        seg = dc.add(seg, aux)
    return multitask_loss(loc, seg, weights), loc, seg


def _monitored(total, seg, monitor: str) -> float:
    return float(seg.item() if monitor == "segmentation" else total.item())


def _validation_loss(model, samples, config: TrainConfig) -> float:
    acc = 0.0
    for i in range(0, len(samples), config.batch_size):
        batch = samples[i:i + config.batch_size]
        total, _, seg = _losses_for(model, batch, config.weights)
        acc += _monitored(total, seg, config.monitor) * len(batch)
    return acc / len(samples)


def _snapshot(model: LUNetModel) -> dict:
    return {name: t.data.copy() for name, t in model.params.items()}


def train(model: LUNetModel, train_records, val_records, config: TrainConfig):
    """Returns (model restored to the best-validation epoch, TrainHistory).

    The first epoch always seeds the early-stopping incumbent, so a
    constant validation loss stops at exactly epoch patience+1. The
    returned parameters are the best over epochs 0..stopped (epoch 0 being
    the initial parameters), so training can never hand back something
    worse than what it started with.
    """
    if not list(train_records) or not list(val_records):
        raise EmptyDataset("train and validation sets must both be nonempty")
    samples = make_samples(train_records)
    val_samples = make_samples(val_records)
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.learning_rate)

    val0 = _validation_loss(model, val_samples, config)
    history = TrainHistory(train=[], val=[val0], best_epoch=0,
                           stopped_epoch=0, monitor=config.monitor)
    if not np.isfinite(val0):
        raise DivergedLoss("non-finite validation loss before training",
                           {"epoch": 0, "history": history})
    best_return_val, best_snap = val0, _snapshot(model)
    stop_best = np.inf
    wait = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(samples), config.batch_size):
            batch = [samples[j] for j in order[start:start + config.batch_size]]
            opt.zero_grad()
            with dc.Tape() as tape:
                total, _, seg = _losses_for(model, batch, config.weights)
                dc.backward(tape, total)
            value = float(total.item())
            if not np.isfinite(value):
                raise DivergedLoss(
                    f"non-finite training loss at epoch {epoch}",
                    {"epoch": epoch, "batch_start": int(start), "loss": value,
                     "history": history},
                )
            opt.step()
            epoch_loss += value * len(batch)
        history.train.append(epoch_loss / len(samples))

        val = _validation_loss(model, val_samples, config)
        if not np.isfinite(val):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch}",
                               {"epoch": epoch, "history": history})
        history.val.append(val)
        history.stopped_epoch = epoch
        if val < stop_best:
            stop_best, wait = val, 0
        else:
            wait += 1
        if val < best_return_val:
            best_return_val, best_snap = val, _snapshot(model)
            history.best_epoch = epoch
        if wait >= config.patience:
            break

    for name, t in model.params.items():
        t.data = best_snap[name].copy()
    opt.zero_grad()
    return model, history
