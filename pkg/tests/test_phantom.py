"""Synthetic patient generation: determinism, anatomy, volumes, and folds."""

from types import SimpleNamespace

import numpy as np
import pytest

from conftest import coarse_params
from lunetkit.clinical import ejection_fraction, simpson_biplane
from lunetkit.errors import InvalidK, InvalidParams
from lunetkit.grid import tight_bbox
from lunetkit.phantom import (
    FoldAssignment,
    PhantomParams,
    ef_category,
    generate_dataset,
    generate_patient,
    stratified_folds,
)

KEYS = [(v, i) for v in ("2CH", "4CH") for i in ("ED", "ES")]


class TestGeneratePatient:
    def test_same_seed_bitwise(self):
        a = generate_patient(coarse_params(), seed=5)
        b = generate_patient(coarse_params(), seed=5)
        for key in KEYS:
            assert np.array_equal(a.images[key].pixels, b.images[key].pixels)
            assert np.array_equal(a.masks[key].labels, b.masks[key].labels)
            assert a.boxes[key] == b.boxes[key]
        assert (a.edv, a.esv, a.ef, a.quality, a.ef_category) == (b.edv, b.esv, b.ef, b.quality, b.ef_category)

    def test_different_seed_differs(self):
        a = generate_patient(coarse_params(), seed=5)
        b = generate_patient(coarse_params(), seed=6)
        assert any(not np.array_equal(a.masks[k].labels, b.masks[k].labels) for k in KEYS)

    def test_ef_matches_volumes(self):
        rec = generate_patient(coarse_params(), seed=9)
        assert rec.ef == pytest.approx(ejection_fraction(rec.edv, rec.esv), abs=1e-9)
        assert rec.edv > rec.esv > 0
        assert rec.ef_category == ef_category(rec.ef)

    def test_reference_box_is_tight_epi_box(self):
        rec = generate_patient(coarse_params(), seed=2)
        for key in KEYS:
            assert rec.boxes[key] == tight_bbox(rec.masks[key], "epi")

    def test_myocardium_encloses_endo(self):
        # the shell is open at the basal cut, so enclosure shows up as strict
        # box containment on the apical and both lateral sides
        for seed in range(6):
            rec = generate_patient(coarse_params(), seed=seed)
            for key in KEYS:
                labels = rec.masks[key].labels
                assert (labels == 1).any() and (labels == 2).any()
                en = tight_bbox(rec.masks[key], "endo").as_tuple()
                ep = tight_bbox(rec.masks[key], "epi").as_tuple()
                assert ep[0] < en[0] and en[1] <= ep[1]
                assert ep[2] < en[2] and en[3] < ep[3]

    def test_images_in_unit_range(self):
        rec = generate_patient(coarse_params(), seed=1)
        for key in KEYS:
            px = rec.images[key].pixels
            assert px.min() >= 0.0 and px.max() <= 1.0

    def test_quality_is_categorical(self):
        rec = generate_patient(coarse_params(), seed=0)
        assert rec.quality in ("good", "medium", "poor")

    def test_anatomy_must_fit(self):
        with pytest.raises(InvalidParams):
            generate_patient(PhantomParams(image_size=32, spacing_mm=0.5), seed=0)

    def test_simpson_recovers_volumes(self):
        # default resolution: disc volumes on the reference masks track the
        # analytic truncated-ellipsoid volumes
        rec = generate_patient(PhantomParams(), seed=4)
        edv = simpson_biplane(rec.masks[("2CH", "ED")], rec.masks[("4CH", "ED")])
        esv = simpson_biplane(rec.masks[("2CH", "ES")], rec.masks[("4CH", "ES")])
        assert abs(edv - rec.edv) / rec.edv <= 0.05
        assert abs(esv - rec.esv) / rec.esv <= 0.05


class TestGenerateDataset:
    def test_ids_unique_and_deterministic(self):
        a = generate_dataset(coarse_params(), n=4, master_seed=3)
        b = generate_dataset(coarse_params(), n=4, master_seed=3)
        ids = [r.patient_id for r in a]
        assert len(set(ids)) == 4
        for ra, rb in zip(a, b):
            assert ra.patient_id == rb.patient_id
            assert np.array_equal(ra.images[("2CH", "ED")].pixels, rb.images[("2CH", "ED")].pixels)

    def test_patients_differ(self):
        recs = generate_dataset(coarse_params(), n=3, master_seed=0)
        assert not np.array_equal(recs[0].masks[("2CH", "ED")].labels,
                                  recs[1].masks[("2CH", "ED")].labels)


def stand_ins(counts):
    """counts: {(quality, category): n} -> duck-typed records."""
    recs = []
    for (quality, category), n in counts.items():
        recs.extend(SimpleNamespace(quality=quality, ef_category=category) for _ in range(n))
    return recs


class TestStratifiedFolds:
    def test_500_records_k10_even(self):
        counts = {("good", "<=45"): 140, ("good", "45-55"): 120, ("medium", ">=55"): 150,
                  ("poor", "45-55"): 90}
        folds = stratified_folds(stand_ins(counts), k=10, seed=0)
        assert folds.k == 10
        sizes = np.bincount(folds.folds, minlength=10)
        assert np.all(sizes == 50)

    def test_30_uniform_records_k10(self):
        # 3 strata x 10 records, k=10: each stratum deals one record per fold
        strata = [("good", "<=45"), ("medium", "45-55"), ("poor", ">=55")]
        recs = stand_ins({key: 10 for key in strata})
        folds = stratified_folds(recs, k=10, seed=1)
        per_fold = {}
        for rec, f in zip(recs, folds.folds):
            per_fold.setdefault(f, []).append((rec.quality, rec.ef_category))
        for members in per_fold.values():
            assert len(members) == 3
            assert len(set(members)) == 3

    def test_per_stratum_counts_within_one(self):
        rng = np.random.default_rng(6)
        counts = {(q, c): int(rng.integers(5, 40))
                  for q in ("good", "medium", "poor") for c in ("<=45", "45-55", ">=55")}
        recs = stand_ins(counts)
        k = 7
        folds = stratified_folds(recs, k=k, seed=2)
        for (q, c), n in counts.items():
            per_fold = np.zeros(k, dtype=int)
            for rec, f in zip(recs, folds.folds):
                if (rec.quality, rec.ef_category) == (q, c):
                    per_fold[f] += 1
            assert per_fold.max() - per_fold.min() <= 1

    def test_same_seed_same_assignment(self):
        recs = stand_ins({("good", "<=45"): 11, ("poor", ">=55"): 9})
        a = stratified_folds(recs, k=4, seed=7)
        b = stratified_folds(recs, k=4, seed=7)
        assert a == b

    def test_invalid_k(self):
        recs = stand_ins({("good", "<=45"): 5})
        with pytest.raises(InvalidK):
            stratified_folds(recs, k=1)
        with pytest.raises(InvalidK):
            stratified_folds(recs, k=6)


class TestEfCategory:
    def test_boundaries(self):
        assert ef_category(30.0) == "<=45"
        assert ef_category(45.0) == "<=45"
        assert ef_category(45.1) == "45-55"
        assert ef_category(54.9) == "45-55"
        assert ef_category(55.0) == ">=55"
        assert ef_category(70.0) == ">=55"


class TestFoldAssignment:
    def test_out_of_range_fold_rejected(self):
        with pytest.raises(InvalidK):
            FoldAssignment(3, (0, 1, 5))
        with pytest.raises(InvalidK):
            FoldAssignment(2, (0, -1))

    def test_unbalanced_sizes_rejected(self):
        with pytest.raises(InvalidK):
            FoldAssignment(2, (0, 0, 0, 1))

    def test_balanced_accepted(self):
        fa = FoldAssignment(3, (0, 1, 2, 0))
        assert fa.k == 3
