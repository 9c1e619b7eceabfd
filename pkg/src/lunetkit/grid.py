"""Image grids, label masks, contours, and bounding-box geometry.

Conventions used throughout the package:

* the x axis is the row (height) axis, y the column (width) axis;
* a pixel at index (r, c) occupies the unit cell [r, r+1) x [c, c+1),
  so the tight box of rows r0..r1 spans x in [r0, r1+1);
* contour points are pixel centers, i.e. (r + 0.5, c + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyContour, EmptyStructure, GridMismatch

ENDO = "endo"  # LV cavity: class 1
EPI = "epi"  # cavity + myocardium: classes 1 and 2

_STRUCTURES = (ENDO, EPI)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PixelSpacing:
    """Physical pixel size: dx along rows, dy along columns, in mm."""

    dx: float
    dy: float

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError(f"spacing must be positive, got ({self.dx}, {self.dy})")


@dataclass(frozen=True)
class ImageGrid:
    """A 2D scalar image with intensities in [0,1] and physical spacing."""

    pixels: np.ndarray  # (H, W) float
    spacing: PixelSpacing

    def __post_init__(self):
        px = _readonly(np.asarray(self.pixels, dtype=np.float64))
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"pixels must be a nonempty 2D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("intensities must be finite and within [0,1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel class map over {0: background, 1: LV cavity, 2: myocardium}."""

    labels: np.ndarray  # (H, W) int
    spacing: PixelSpacing

    def __post_init__(self):
        lb = _readonly(np.asarray(self.labels, dtype=np.int64))
        if lb.ndim != 2 or lb.shape[0] < 1 or lb.shape[1] < 1:
            raise ValueError(f"labels must be a nonempty 2D array, got shape {lb.shape}")
        bad = np.setdiff1d(np.unique(lb), [0, 1, 2])
        if bad.size:
            raise ValueError(f"labels outside {{0,1,2}}: {bad.tolist()}")
        object.__setattr__(self, "labels", lb)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def structure_pixels(self, structure: str) -> np.ndarray:
        """Boolean mask of the requested structure (epi = cavity + myocardium)."""
        if structure == ENDO:
            return self.labels == 1
        if structure == EPI:
            return self.labels >= 1
        raise ValueError(f"structure must be one of {_STRUCTURES}, got {structure!r}")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @property
    def h(self) -> float:
        return self.x_max - self.x_min

    @property
    def w(self) -> float:
        return self.y_max - self.y_min

    @property
    def x_c(self) -> float:
        return (self.x_min + self.x_max) / 2.0

    @property
    def y_c(self) -> float:
        return (self.y_min + self.y_max) / 2.0

    @property
    def area(self) -> float:
        return self.h * self.w

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)


@dataclass(frozen=True)
class Contour:
    """Ordered boundary points (pixel coordinates) with physical spacing."""

    points: np.ndarray  # (N, 2) float, rows of (x, y)
    spacing: PixelSpacing

    def __post_init__(self):
        pts = _readonly(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise EmptyContour(f"contour needs an (N,2) point array, got shape {pts.shape}")
        object.__setattr__(self, "points", pts)

    def points_mm(self) -> np.ndarray:
        """Points scaled into physical mm coordinates."""
        return self.points * np.array([self.spacing.dx, self.spacing.dy])


# --- operations ----------------------------------------------------------


def tight_bbox(mask: LabelMask, structure: str) -> BoundingBox:
    """Smallest box containing every pixel of the structure (cells included)."""
    sel = mask.structure_pixels(structure)
    rows, cols = np.nonzero(sel)
    if rows.size == 0:
        raise EmptyStructure(f"mask has no {structure!r} pixels")
    return BoundingBox(
        float(rows.min()), float(rows.max()) + 1.0,
        float(cols.min()), float(cols.max()) + 1.0,
    )


def expand_bbox(bb: BoundingBox, m: float, bounds: tuple[int, int]) -> BoundingBox:
    """Grow a box by a margin fraction of its own height/width, then clamp.

    bounds is the (height, width) image extent; coordinates never leave
    [0, height] x [0, width].
    """
    if m < 0:
        raise ValueError(f"margin must be nonnegative, got {m}")
    height, width = bounds
    return BoundingBox(
        max(0.0, bb.x_min - m * bb.h),
        min(float(height), bb.x_max + m * bb.h),
        max(0.0, bb.y_min - m * bb.w),
        min(float(width), bb.y_max + m * bb.w),
    )


def expansion_clipped(bb: BoundingBox, m: float, bounds: tuple[int, int]) -> bool:
    """True when expand_bbox had to clamp the margin at an image border."""
    height, width = bounds
    return (
        bb.x_min - m * bb.h < 0.0
        or bb.x_max + m * bb.h > float(height)
        or bb.y_min - m * bb.w < 0.0
        or bb.y_max + m * bb.w > float(width)
    )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when both are degenerate."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def bbox_errors(
    pred: BoundingBox, ref: BoundingBox, spacing: PixelSpacing
) -> tuple[float, float, float, float]:
    """Absolute center/height/width errors in mm: (e_xc, e_yc, e_h, e_w)."""
    return (
        abs(pred.x_c - ref.x_c) * spacing.dx,
        abs(pred.y_c - ref.y_c) * spacing.dy,
        abs(pred.h - ref.h) * spacing.dx,
        abs(pred.w - ref.w) * spacing.dy,
    )


def encompasses(bb: BoundingBox, mask: LabelMask, structure: str) -> bool:
    """True iff every structure pixel cell lies inside bb."""
    tb = tight_bbox(mask, structure)
    return (
        tb.x_min >= bb.x_min
        and tb.x_max <= bb.x_max
        and tb.y_min >= bb.y_min
        and tb.y_max <= bb.y_max
    )


def mask_to_contour(mask: LabelMask, structure: str) -> Contour:
    """Boundary pixel centers: structure pixels with a 4-neighbor outside.

    The image border counts as outside. Points come out in row-major scan
    order, as (r + 0.5, c + 0.5).
    """
    sel = mask.structure_pixels(structure)
    if not sel.any():
        raise EmptyStructure(f"mask has no {structure!r} pixels")
    padded = np.pad(sel, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    rows, cols = np.nonzero(sel & ~interior)
    points = np.stack([rows + 0.5, cols + 0.5], axis=1)
    return Contour(points, mask.spacing)


def same_grid(a, b) -> None:
    """Raise GridMismatch unless a and b share shape and spacing."""
    if (a.height, a.width) != (b.height, b.width) or a.spacing != b.spacing:
        raise GridMismatch(
            f"grids differ: {(a.height, a.width, a.spacing)} vs {(b.height, b.width, b.spacing)}"
        )
