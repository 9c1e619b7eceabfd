"""Segmentation metrics against counting and exhaustive-distance oracles."""

import numpy as np
import pytest

from conftest import label_mask
from lunetkit.errors import EmptyContour, EmptyStructure, GridMismatch, IncompleteScores
from lunetkit.grid import Contour, PixelSpacing, mask_to_contour
from lunetkit.metrics import (
    OutlierBounds,
    SegScores,
    classify_outliers,
    convexity,
    dice,
    hausdorff,
    mean_absolute_distance,
    simplicity,
)


def pairwise_mm(a, b):
    d = a.points[:, None, :] - b.points[None, :, :]
    d = d * np.array([a.spacing.dx, a.spacing.dy])
    return np.sqrt((d ** 2).sum(axis=2))


def oracle_distances(a, b):
    d = pairwise_mm(a, b)
    d_m = 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())
    d_h = max(d.min(axis=1).max(), d.min(axis=0).max())
    return d_m, d_h


def disc_mask(size=48, r=14, label=1):
    yy, xx = np.mgrid[0:size, 0:size]
    m = np.zeros((size, size), dtype=np.int64)
    m[(xx - size // 2) ** 2 + (yy - size // 2) ** 2 <= r * r] = label
    return m


class TestDice:
    def test_identical(self):
        m = label_mask(disc_mask())
        assert dice(m, m, "endo") == 1.0

    def test_disjoint(self):
        a = np.zeros((20, 20), dtype=np.int64)
        a[2:6, 2:6] = 1
        b = np.zeros((20, 20), dtype=np.int64)
        b[10:14, 10:14] = 1
        assert dice(label_mask(a), label_mask(b), "endo") == 0.0

    def test_half_overlap_counting(self):
        a = np.zeros((10, 40), dtype=np.int64)
        a[:, 0:10] = 1
        b = np.zeros((10, 40), dtype=np.int64)
        b[:, 5:15] = 1
        assert dice(label_mask(a), label_mask(b), "endo") == pytest.approx(0.5, abs=1e-15)

    def test_both_empty_is_one(self):
        z = label_mask(np.zeros((8, 8)))
        assert dice(z, z, "endo") == 1.0

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            dice(label_mask(disc_mask()), label_mask(disc_mask(), dx=2.0), "endo")

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            a = rng.integers(0, 3, size=(12, 12))
            b = rng.integers(0, 3, size=(12, 12))
            for structure, want in (("endo", (1,)), ("epi", (1, 2))):
                sa = np.isin(a, want)
                sb = np.isin(b, want)
                denom = sa.sum() + sb.sum()
                oracle = 1.0 if denom == 0 else 2.0 * (sa & sb).sum() / denom
                assert dice(label_mask(a), label_mask(b), structure) == pytest.approx(oracle, abs=1e-15)


class TestDistances:
    def test_identical_contours(self):
        c = mask_to_contour(label_mask(disc_mask()), "endo")
        assert mean_absolute_distance(c, c) == 0.0
        assert hausdorff(c, c) == 0.0

    def test_parallel_rows(self):
        sp = PixelSpacing(1.0, 1.0)
        a = Contour(np.array([[0.0, float(c)] for c in range(10)]), sp)
        b = Contour(np.array([[4.0, float(c)] for c in range(10)]), sp)
        assert mean_absolute_distance(a, b) == pytest.approx(4.0, abs=1e-12)

    def test_spacing_scales_linearly(self):
        a_pts = np.array([[0.0, float(c)] for c in range(10)])
        b_pts = np.array([[4.0, float(c)] for c in range(10)])
        one = mean_absolute_distance(Contour(a_pts, PixelSpacing(1.0, 1.0)),
                                     Contour(b_pts, PixelSpacing(1.0, 1.0)))
        two = mean_absolute_distance(Contour(a_pts, PixelSpacing(2.0, 2.0)),
                                     Contour(b_pts, PixelSpacing(2.0, 2.0)))
        assert two == pytest.approx(2.0 * one, abs=1e-12)

    def test_translated_square_hausdorff(self):
        a = np.zeros((40, 40), dtype=np.int64)
        a[5:25, 5:25] = 1
        b = np.zeros((40, 40), dtype=np.int64)
        b[8:28, 5:25] = 1
        ca = mask_to_contour(label_mask(a), "endo")
        cb = mask_to_contour(label_mask(b), "endo")
        assert hausdorff(ca, cb) == pytest.approx(3.0, abs=1e-12)

    def test_empty_contour(self):
        c = mask_to_contour(label_mask(disc_mask()), "endo")
        with pytest.raises(EmptyContour):
            mean_absolute_distance(c, Contour(np.zeros((0, 2)), c.spacing))

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            sp = PixelSpacing(float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.2, 2.0)))
            a = Contour(rng.uniform(0, 30, size=(rng.integers(2, 40), 2)), sp)
            b = Contour(rng.uniform(0, 30, size=(rng.integers(2, 40), 2)), sp)
            dm_ref, dh_ref = oracle_distances(a, b)
            assert mean_absolute_distance(a, b) == pytest.approx(dm_ref, abs=1e-9)
            assert hausdorff(a, b) == pytest.approx(dh_ref, abs=1e-9)
            assert hausdorff(a, b) >= mean_absolute_distance(a, b) - 1e-12

    def test_translation_invariance(self):
        rng = np.random.default_rng(2)
        sp = PixelSpacing(0.7, 1.3)
        a = Contour(rng.uniform(0, 20, size=(15, 2)), sp)
        b = Contour(rng.uniform(0, 20, size=(12, 2)), sp)
        shift = np.array([3.7, -1.2])
        a2 = Contour(a.points + shift, sp)
        b2 = Contour(b.points + shift, sp)
        assert mean_absolute_distance(a2, b2) == pytest.approx(mean_absolute_distance(a, b), abs=1e-12)
        assert hausdorff(a2, b2) == pytest.approx(hausdorff(a, b), abs=1e-12)


class TestShapeScores:
    def test_disc_simplicity_near_one(self):
        m = label_mask(disc_mask(size=100, r=40))
        assert simplicity(m, "endo") >= 0.95

    def test_square_simplicity(self):
        m = np.zeros((120, 120), dtype=np.int64)
        m[10:110, 10:110] = 1
        # sqrt(4*pi)/4 = 0.886 up to rasterization
        assert simplicity(label_mask(m), "endo") == pytest.approx(0.886, abs=0.03)

    def test_bar_less_simple_than_square(self):
        sq = np.zeros((120, 120), dtype=np.int64)
        sq[10:110, 10:110] = 1
        bar = np.zeros((120, 120), dtype=np.int64)
        bar[10:14, 10:110] = 1
        assert simplicity(label_mask(bar), "endo") < simplicity(label_mask(sq), "endo") - 0.2

    def test_simplicity_scale_invariant(self):
        m = disc_mask(size=80, r=25)
        a = simplicity(label_mask(m, dx=1.0, dy=1.0), "endo")
        b = simplicity(label_mask(m, dx=3.0, dy=3.0), "endo")
        assert a == pytest.approx(b, abs=1e-12)

    def test_disc_convexity(self):
        assert convexity(label_mask(disc_mask(size=100, r=40)), "endo") >= 0.98

    def test_notched_rectangle_convexity(self):
        # solid 40x40 minus a 20x20 notch: area 1200, center hull 39x39
        m = np.zeros((60, 60), dtype=np.int64)
        m[5:45, 10:50] = 1
        m[5:25, 20:40] = 0
        assert convexity(label_mask(m), "endo") == pytest.approx(1200.0 / 1521.0, abs=1e-9)

    def test_crescent_convexity(self):
        yy, xx = np.mgrid[0:100, 0:100]
        outer = (xx - 50) ** 2 + (yy - 50) ** 2 <= 40 ** 2
        inner = (xx - 65) ** 2 + (yy - 50) ** 2 <= 32 ** 2
        m = np.where(outer & ~inner, 1, 0).astype(np.int64)
        val = convexity(label_mask(m), "endo")
        assert val < 0.9

    def test_empty_region(self):
        with pytest.raises(EmptyStructure):
            simplicity(label_mask(np.zeros((8, 8))), "endo")


def full_scores(d_m=1.0, d_h=2.0):
    return [
        SegScores(view, instant, structure, 0.9, d_m, d_h)
        for view in ("2CH", "4CH")
        for instant in ("ED", "ES")
        for structure in ("endo", "epi")
    ]


def good_shapes():
    m = disc_mask(size=48, r=14, label=1)
    yy, xx = np.mgrid[0:48, 0:48]
    ring = ((xx - 24) ** 2 + (yy - 24) ** 2 <= 20 ** 2) & (m == 0)
    m[ring] = 2
    mask = label_mask(m)
    return {(v, i): mask for v in ("2CH", "4CH") for i in ("ED", "ES")}


def bounds(dm=3.0, dh=6.0, smin=0.5, cmin=0.5):
    return OutlierBounds({"endo": dm, "epi": dm}, {"endo": dh, "epi": dh}, smin, cmin)


class TestClassifyOutliers:
    def test_all_clear(self):
        flags = classify_outliers(full_scores(), bounds(), good_shapes())
        assert (flags.geometric, flags.anatomical, flags.both) == (False, False, False)

    def test_single_dh_violation(self):
        scores = full_scores()
        scores[3] = SegScores(scores[3].view, scores[3].instant, scores[3].structure, 0.9, 1.0, 99.0)
        flags = classify_outliers(scores, bounds(), good_shapes())
        assert (flags.geometric, flags.anatomical, flags.both) == (True, False, False)

    def test_geometric_and_anatomical(self):
        scores = full_scores()
        scores[0] = SegScores("2CH", "ED", "endo", 0.9, 50.0, 51.0)
        shapes = good_shapes()
        # one epi shape with a notch: convexity 0.789 sits below the 0.9 threshold
        m = np.zeros((60, 60), dtype=np.int64)
        m[5:45, 10:50] = 2
        m[5:25, 20:40] = 0
        m[30:40, 20:30] = 1
        shapes[("4CH", "ES")] = label_mask(m)
        flags = classify_outliers(scores, bounds(cmin=0.9), shapes)
        assert (flags.geometric, flags.anatomical, flags.both) == (True, True, True)

    def test_nan_distance_flags_geometric(self):
        scores = full_scores()
        scores[1] = SegScores(scores[1].view, scores[1].instant, scores[1].structure, 0.0, float("nan"), float("nan"))
        flags = classify_outliers(scores, bounds(), good_shapes())
        assert flags.geometric

    def test_missing_score_raises(self):
        with pytest.raises(IncompleteScores):
            classify_outliers(full_scores()[:-1], bounds(), good_shapes())

    def test_inverted_distances_rejected(self):
        with pytest.raises(ValueError):
            SegScores("2CH", "ED", "endo", 0.9, 5.0, 2.0)

    def test_matches_brute_force_restatement(self):
        rng = np.random.default_rng(3)
        shapes = good_shapes()
        shape_vals = [
            (simplicity(m, s), convexity(m, s))
            for m in shapes.values()
            for s in ("endo", "epi")
        ]
        for _ in range(50):
            scores = []
            for v in ("2CH", "4CH"):
                for i in ("ED", "ES"):
                    for s in ("endo", "epi"):
                        d_m = float(rng.uniform(0, 5))
                        scores.append(SegScores(v, i, s, 0.9, d_m, d_m + float(rng.uniform(0, 5))))
            b = bounds(dm=float(rng.uniform(0.5, 5)), dh=float(rng.uniform(2, 10)),
                       smin=float(rng.uniform(0.05, 0.95)), cmin=float(rng.uniform(0.05, 0.95)))
            geo = any(s.d_m > b.dm_max[s.structure] or s.d_h > b.dh_max[s.structure] for s in scores)
            ana = any(sv < b.simplicity_min or cv < b.convexity_min for sv, cv in shape_vals)
            flags = classify_outliers(scores, b, shapes)
            assert (flags.geometric, flags.anatomical, flags.both) == (geo, ana, geo and ana)
