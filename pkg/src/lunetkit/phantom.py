"""Synthetic 2D echo-like phantoms with exact analytic ground truth.

Each patient is a truncated prolate ellipsoid: the cavity's long semi-axis
a and two short semi-axes (one per view) define the analytic volume

    V = pi * a * b_2ch * b_4ch * (tau - tau^3/3 + 2/3)   [mm^3]

where the base truncation plane sits at tau * a. The ES geometry is the ED
geometry scaled by a single contraction factor c about the cavity center,
so ESV = c^3 * EDV and EF = 100 * (1 - c^3) exactly. Masks are rasterized
from the same analytic shapes (pixel-center-inside), which closes the loop
between the generator and the biplane volume pipeline. The myocardium is a
constant-thickness shell around the cavity, open at the base plane.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import ndimage

from .errors import InvalidK, InvalidParams
from .grid import BoundingBox, ImageGrid, LabelMask, PixelSpacing, tight_bbox

VIEWS = ("2CH", "4CH")
INSTANTS = ("ED", "ES")
QUALITIES = ("good", "medium", "poor")
EF_CATEGORIES = ("<=45", "45-55", ">=55")


@dataclass(frozen=True)
class PhantomParams:
    image_size: int = 256
    spacing_mm: float = 0.5
    long_axis_mm: tuple[float, float] = (32.0, 42.0)  # cavity semi-axis a at ED
    short_axis_mm: tuple[float, float] = (14.0, 24.0)  # per-view semi-axis b at ED
    truncation: tuple[float, float] = (0.55, 0.80)  # base plane at tau * a
    contraction: tuple[float, float] = (0.63, 0.91)  # ES scale; EF = 100*(1 - c^3)
    thickness_mm: tuple[float, float] = (5.0, 9.0)  # myocardial shell
    translation_px: float = 10.0
    rotation_deg: float = 12.0
    speckle_sigma: tuple[float, float] = (0.15, 0.45)
    contrast: tuple[float, float] = (0.5, 1.0)
    sector_angle_deg: float = 80.0
    # quality rule: good needs low speckle AND high contrast, poor means
    # high speckle OR low contrast, medium is everything else
    speckle_thresholds: tuple[float, float] = (0.285, 0.40)
    contrast_thresholds: tuple[float, float] = (0.75, 0.56)

    def __post_init__(self):
        ranges = {
            "long_axis_mm": self.long_axis_mm,
            "short_axis_mm": self.short_axis_mm,
            "truncation": self.truncation,
            "contraction": self.contraction,
            "thickness_mm": self.thickness_mm,
            "speckle_sigma": self.speckle_sigma,
            "contrast": self.contrast,
        }
        for name, (lo, hi) in ranges.items():
            if not (0 < lo <= hi):
                raise InvalidParams(f"{name} range must be positive and ordered, got ({lo}, {hi})")
        if self.contraction[1] >= 1.0:
            raise InvalidParams("contraction factors must stay below 1")
        if self.truncation[1] > 1.0:
            raise InvalidParams("truncation fraction cannot exceed 1")
        if self.image_size < 32 or self.spacing_mm <= 0:
            raise InvalidParams("image must be at least 32 px with positive spacing")
        extent = self.image_size * self.spacing_mm
        reach = 2 * (self.long_axis_mm[1] + self.thickness_mm[1])
        if reach + 2 * self.translation_px * self.spacing_mm + 4 * self.spacing_mm > extent:
            raise InvalidParams(
                f"largest phantom ({reach:.0f} mm plus pose) cannot fit the {extent:.0f} mm field"
            )


@dataclass(frozen=True)
class PatientRecord:
    """All four acquisitions of one synthetic patient plus ground truth."""

    patient_id: str
    images: Mapping[tuple[str, str], ImageGrid]
    masks: Mapping[tuple[str, str], LabelMask]
    boxes: Mapping[tuple[str, str], BoundingBox]  # tight epi boxes, pre-margin
    edv: float
    esv: float
    ef: float
    quality: str
    ef_category: str
    fold: int | None = None

    def __post_init__(self):
        for key in ((v, i) for v in VIEWS for i in INSTANTS):
            mask = self.masks[key]
            endo = mask.structure_pixels("endo")
            epi = mask.structure_pixels("epi")
            if not (endo <= epi).all():
                raise InvalidParams(f"endo not inside epi for {key}")
            if self.boxes[key] != tight_bbox(mask, "epi"):
                raise InvalidParams(f"reference box is not the tight epi box for {key}")
        expected_ef = 100.0 * (self.edv - self.esv) / self.edv
        if abs(self.ef - expected_ef) > 1e-9:
            raise InvalidParams(f"ef {self.ef} inconsistent with volumes")
        if self.quality not in QUALITIES or self.ef_category not in EF_CATEGORIES:
            raise InvalidParams(f"bad labels {self.quality!r}/{self.ef_category!r}")

    def with_fold(self, fold: int) -> "PatientRecord":
        return PatientRecord(
            self.patient_id, self.images, self.masks, self.boxes,
            self.edv, self.esv, self.ef, self.quality, self.ef_category, fold,
        )


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    folds: tuple[int, ...]  # fold index per record, in record order

    def __post_init__(self):
        arr = np.asarray(self.folds)
        if arr.size and (arr.min() < 0 or arr.max() >= self.k):
            raise InvalidK(f"fold indices must lie in [0, {self.k})")
        counts = np.bincount(arr, minlength=self.k)
        if counts.max() - counts.min() > 1:
            raise InvalidK(f"fold sizes must differ by at most 1, got {counts.tolist()}")


def ef_category(ef: float) -> str:
    if ef <= 45.0:
        return "<=45"
    if ef >= 55.0:
        return ">=55"
    return "45-55"


def _truncated_ellipse(size, spacing, center_mm, a, b, cut_mm, theta) -> np.ndarray:
    rr, cc = np.mgrid[:size, :size]
    x = (rr + 0.5) * spacing - center_mm[0]
    y = (cc + 0.5) * spacing - center_mm[1]
    xr = np.cos(theta) * x + np.sin(theta) * y
    yr = -np.sin(theta) * x + np.cos(theta) * y
    return ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0) & (xr <= cut_mm)


def _sector(size: int, spacing: float, angle_deg: float) -> np.ndarray:
    # wedge opening downward from just above the top-center of the frame
    rr, cc = np.mgrid[:size, :size]
    depth = (rr + 0.5) * spacing + 8.0
    lateral = (cc + 0.5) * spacing - size * spacing / 2.0
    return np.abs(lateral) <= depth * np.tan(np.radians(angle_deg / 2.0))


def truncated_ellipsoid_volume_ml(a: float, b1: float, b2: float, tau: float) -> float:
    """Volume of the ellipsoid cut at tau * a, in ml."""
    return np.pi * a * b1 * b2 * (tau - tau**3 / 3.0 + 2.0 / 3.0) / 1000.0


def generate_patient(params: PhantomParams, seed, patient_id: str = "patient0000") -> PatientRecord:
    """One deterministic patient; seed may be an int or a SeedSequence."""
    rng = np.random.default_rng(seed)
    size, sp = params.image_size, params.spacing_mm
    spacing = PixelSpacing(sp, sp)

    a = rng.uniform(*params.long_axis_mm)
    b_view = {v: rng.uniform(*params.short_axis_mm) for v in VIEWS}
    tau = rng.uniform(*params.truncation)
    c = rng.uniform(*params.contraction)
    thickness = rng.uniform(*params.thickness_mm)
    pose = {
        v: (
            rng.uniform(-params.rotation_deg, params.rotation_deg),
            rng.uniform(-params.translation_px, params.translation_px) * sp,
            rng.uniform(-params.translation_px, params.translation_px) * sp,
        )
        for v in VIEWS
    }
    speckle = rng.uniform(*params.speckle_sigma)
    contrast = rng.uniform(*params.contrast)

    edv = truncated_ellipsoid_volume_ml(a, b_view["2CH"], b_view["4CH"], tau)
    esv = c**3 * edv
    ef = 100.0 * (edv - esv) / edv

    sector = _sector(size, sp, params.sector_angle_deg)
    images, masks, boxes = {}, {}, {}
    center0 = size * sp / 2.0
    for view in VIEWS:
        theta_deg, tx, ty = pose[view]
        theta = np.radians(theta_deg)
        center = (center0 + tx, center0 + ty)
        for instant, scale in (("ED", 1.0), ("ES", c)):
            cut = tau * a * scale
            endo = _truncated_ellipse(size, sp, center, a * scale, b_view[view] * scale, cut, theta)
            epi = _truncated_ellipse(
                size, sp, center, a * scale + thickness, b_view[view] * scale + thickness, cut, theta
            )
            labels = np.zeros((size, size), dtype=np.int64)
            labels[epi] = 2
            labels[endo] = 1
            mask = LabelMask(labels, spacing)

            tissue = np.full((size, size), 0.30)
            tissue[epi & ~endo] = 0.35 + 0.40 * contrast
            tissue[endo] = 0.05
            noise = np.clip(np.exp(speckle * rng.standard_normal((size, size))
                                   - speckle**2 / 2.0), 0.3, 3.0)
            img = ndimage.gaussian_filter(tissue * noise, sigma=1.0)
            img[~sector] = 0.0
            images[(view, instant)] = ImageGrid(np.clip(img, 0.0, 1.0), spacing)
            masks[(view, instant)] = mask
            boxes[(view, instant)] = tight_bbox(mask, "epi")

    s_good, s_poor = params.speckle_thresholds
    c_good, c_poor = params.contrast_thresholds
    if speckle >= s_poor or contrast <= c_poor:
        quality = "poor"
    elif speckle <= s_good and contrast >= c_good:
        quality = "good"
    else:
        quality = "medium"

    return PatientRecord(
        patient_id, images, masks, boxes, edv, esv, ef, quality, ef_category(ef)
    )


def generate_dataset(params: PhantomParams, n: int, master_seed: int) -> list[PatientRecord]:
    """n patients with per-patient RNG streams derived from the master seed."""
    return [
        generate_patient(params, np.random.SeedSequence([master_seed, i]), f"patient{i:04d}")
        for i in range(n)
    ]


def stratified_folds(records, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Deal each (quality x ef_category) stratum round-robin into k folds.

    The fold pointer continues across strata so both the per-stratum and the
    total per-fold counts stay within +/-1 of uniform.
    """
    records = list(records)
    if not 2 <= k <= len(records):
        raise InvalidK(f"k must be in [2, {len(records)}], got {k}")
    rng = np.random.default_rng(seed)
    strata: dict[tuple[str, str], list[int]] = {}
    for idx, rec in enumerate(records):
        strata.setdefault((rec.quality, rec.ef_category), []).append(idx)
    folds = np.empty(len(records), dtype=np.int64)
    pointer = 0
    for key in sorted(strata):
        members = np.array(strata[key])
        rng.shuffle(members)
        for j, idx in enumerate(members):
            folds[idx] = (pointer + j) % k
        pointer = (pointer + len(members)) % k
    return FoldAssignment(k, tuple(int(f) for f in folds))
