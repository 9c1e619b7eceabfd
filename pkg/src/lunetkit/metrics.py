"""Segmentation accuracy metrics and outlier classification.

Distances are symmetric nearest-point statistics in mm. Shape descriptors:
simplicity = sqrt(4*pi*A)/P (maximal for a disc) with the perimeter taken
from a Moore trace of each boundary, straight steps weighted by the pixel
spacing and diagonal steps by the diagonal of the pixel cell; convexity =
A / area(convex hull of the region's pixel centers). Both are clamped to
(0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import EmptyStructure, GridMismatch, IncompleteScores
from .grid import Contour, LabelMask, same_grid

VIEWS = ("2CH", "4CH")
INSTANTS = ("ED", "ES")
STRUCTURES = ("endo", "epi")

# clockwise 8-neighborhood starting north
_NEIGH = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(frozen=True)
class SegScores:
    """Per-structure scores for one (view, instant) image."""

    view: str
    instant: str
    structure: str
    dice: float
    d_m: float
    d_h: float

    def __post_init__(self):
        if self.view not in VIEWS or self.instant not in INSTANTS or self.structure not in STRUCTURES:
            raise ValueError(f"bad score key {(self.view, self.instant, self.structure)}")
        # NaN marks a failed prediction and is allowed through
        if np.isfinite(self.dice) and not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice out of range: {self.dice}")
        if np.isfinite(self.d_m) and np.isfinite(self.d_h):
            if self.d_m < 0 or self.d_h < 0 or self.d_m > self.d_h + 1e-9:
                raise ValueError(f"bad distances d_m={self.d_m}, d_h={self.d_h}")


@dataclass(frozen=True)
class OutlierFlags:
    geometric: bool
    anatomical: bool
    both: bool

    def __post_init__(self):
        if self.both != (self.geometric and self.anatomical):
            raise ValueError("both must equal geometric AND anatomical")


@dataclass(frozen=True)
class OutlierBounds:
    """Upper bounds for distances (mm, per structure) and minimum shape scores."""

    dm_max: Mapping[str, float]
    dh_max: Mapping[str, float]
    simplicity_min: float
    convexity_min: float

    def __post_init__(self):
        for structure in STRUCTURES:
            if self.dm_max[structure] <= 0 or self.dh_max[structure] <= 0:
                raise ValueError(f"bounds for {structure} must be positive")
        if not (0 < self.simplicity_min < 1 and 0 < self.convexity_min < 1):
            raise ValueError("shape thresholds must lie in (0,1)")


# --- overlap and distances -------------------------------------------------


def dice(a: LabelMask, b: LabelMask, structure: str) -> float:
    """2|A∩B| / (|A|+|B|); 1 when both regions are empty."""
    same_grid(a, b)
    ra = a.structure_pixels(structure)
    rb = b.structure_pixels(structure)
    denom = int(ra.sum()) + int(rb.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((ra & rb).sum()) / denom


def _directed_distances(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return cKDTree(q).query(p)[0]


def _paired_mm(a: Contour, b: Contour) -> tuple[np.ndarray, np.ndarray]:
    if a.spacing != b.spacing:
        raise GridMismatch(f"contour spacings differ: {a.spacing} vs {b.spacing}")
    return a.points_mm(), b.points_mm()


def mean_absolute_distance(a: Contour, b: Contour) -> float:
    """Symmetric mean nearest-point distance in mm."""
    pa, pb = _paired_mm(a, b)
    return 0.5 * (
        float(_directed_distances(pa, pb).mean()) + float(_directed_distances(pb, pa).mean())
    )


def hausdorff(a: Contour, b: Contour) -> float:
    """Worst-case nearest-point distance in mm."""
    pa, pb = _paired_mm(a, b)
    return max(
        float(_directed_distances(pa, pb).max()), float(_directed_distances(pb, pa).max())
    )


# --- shape descriptors -------------------------------------------------------


def _trace_perimeter(component: np.ndarray, start: tuple[int, int], dx: float, dy: float) -> float:
    """Moore-neighbor boundary trace length; 0 for an isolated pixel."""
    lengths = [float(np.hypot(dr * dx, dc * dy)) for dr, dc in _NEIGH]
    h, w = component.shape
    r, c = start
    scan = 0
    first = None
    total = 0.0
    for _ in range(4 * int(component.sum()) + 8):
        direction = -1
        for k in range(8):
            idx = (scan + k) % 8
            nr, nc = r + _NEIGH[idx][0], c + _NEIGH[idx][1]
            if 0 <= nr < h and 0 <= nc < w and component[nr, nc]:
                direction = idx
                break
        if direction < 0:
            return 0.0
        if first is None:
            first = (r, c, direction)
        elif (r, c, direction) == first:
            break
        total += lengths[direction]
        r += _NEIGH[direction][0]
        c += _NEIGH[direction][1]
        scan = (direction + 6) % 8
    return total


def _region_perimeter(region: np.ndarray, dx: float, dy: float) -> float:
    """Sum of traced boundary lengths: every 8-connected part plus every hole."""
    total = 0.0
    labeled, n_parts = ndimage.label(region, structure=np.ones((3, 3), dtype=bool))
    for part in range(1, n_parts + 1):
        component = labeled == part
        start = tuple(np.argwhere(component)[0])
        total += _trace_perimeter(component, start, dx, dy)
    holes, n_holes = ndimage.label(~region)  # 4-connectivity, dual of the region
    border = np.unique(
        np.concatenate([holes[0], holes[-1], holes[:, 0], holes[:, -1]])
    )
    for hole in range(1, n_holes + 1):
        if hole in border:
            continue
        component = holes == hole
        start = tuple(np.argwhere(component)[0])
        total += _trace_perimeter(component, start, dx, dy)
    return total


def _nonempty_region(mask: LabelMask, structure: str) -> np.ndarray:
    region = mask.structure_pixels(structure)
    if not region.any():
        raise EmptyStructure(f"mask has no {structure!r} pixels")
    return region


def simplicity(mask: LabelMask, structure: str) -> float:
    """sqrt(4*pi*Area)/Perimeter, clamped to <= 1; 1 for point-like regions."""
    region = _nonempty_region(mask, structure)
    dx, dy = mask.spacing.dx, mask.spacing.dy
    area = float(region.sum()) * dx * dy
    perimeter = _region_perimeter(region, dx, dy)
    if perimeter <= 0.0:
        return 1.0
    return min(1.0, float(np.sqrt(4.0 * np.pi * area)) / perimeter)


def convexity(mask: LabelMask, structure: str) -> float:
    """Area(region) / Area(convex hull of pixel centers), clamped to <= 1."""
    region = _nonempty_region(mask, structure)
    dx, dy = mask.spacing.dx, mask.spacing.dy
    area = float(region.sum()) * dx * dy
    pts = (np.argwhere(region) + 0.5) * np.array([dx, dy])
    try:
        hull_area = ConvexHull(pts).volume
    except QhullError:  # collinear centers: the region is a line of pixels
        return 1.0
    if hull_area <= 0.0:
        return 1.0
    return min(1.0, area / hull_area)


# --- outlier classification ---------------------------------------------------


def classify_outliers(
    patient_scores: Iterable[SegScores],
    bounds: OutlierBounds,
    shapes: Mapping[tuple[str, str], LabelMask],
) -> OutlierFlags:
    """Patient-level flags from the full 2-view x 2-instant score set.

    geometric: any of the 8 per-structure distance scores exceeds its bound
    for either structure. anatomical: any predicted shape scores below the
    simplicity/convexity thresholds; a structure missing from a predicted
    mask counts as anatomically degenerate. A NaN distance (failed
    prediction) exceeds every bound.
    """
    table = {}
    for s in patient_scores:
        table[(s.view, s.instant, s.structure)] = s
    expected = [(v, i, st) for v in VIEWS for i in INSTANTS for st in STRUCTURES]
    missing = [key for key in expected if key not in table]
    if missing:
        raise IncompleteScores(f"missing score entries: {missing}")

    geometric = False
    for s in table.values():
        ok = s.d_m <= bounds.dm_max[s.structure] and s.d_h <= bounds.dh_max[s.structure]
        geometric = geometric or not ok  # NaN compares false, flagging failures

    anatomical = False
    for view in VIEWS:
        for instant in INSTANTS:
            mask = shapes[(view, instant)]
            for structure in STRUCTURES:
                try:
                    low = (
                        simplicity(mask, structure) < bounds.simplicity_min
                        or convexity(mask, structure) < bounds.convexity_min
                    )
                except EmptyStructure:
                    low = True
                anatomical = anatomical or low

    return OutlierFlags(geometric, anatomical, geometric and anatomical)
