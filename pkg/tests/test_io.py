"""Persistence round trips: datasets, model files, configs, and bounds."""

import numpy as np
import pytest

from conftest import coarse_params, tiny_net
from lunetkit import io
from lunetkit.diffcore import save_params
from lunetkit.errors import EmptyDataset, InvalidConfig, IoFailure, ShapeMismatch
from lunetkit.harness import default_bounds
from lunetkit.nets import build_lunet, lunet_forward
from lunetkit.phantom import FoldAssignment, generate_dataset
import lunetkit.diffcore as dc

KEYS = [(v, i) for v in ("2CH", "4CH") for i in ("ED", "ES")]


class TestDatasetRoundTrip:
    def test_fields_survive(self, tmp_path, coarse_records):
        io.save_dataset(coarse_records, tmp_path)
        loaded = io.load_dataset(tmp_path)
        assert [r.patient_id for r in loaded] == [r.patient_id for r in coarse_records]
        for orig, back in zip(coarse_records, loaded):
            for key in KEYS:
                # images are quantized to 16 bits on disk
                err = np.abs(back.images[key].pixels - orig.images[key].pixels)
                assert err.max() <= 0.5 / 65535.0 + 1e-12
                assert np.array_equal(back.masks[key].labels, orig.masks[key].labels)
                assert back.boxes[key] == orig.boxes[key]
                assert back.masks[key].spacing == orig.masks[key].spacing
            assert back.edv == orig.edv and back.esv == orig.esv and back.ef == orig.ef
            assert back.quality == orig.quality
            assert back.ef_category == orig.ef_category
            assert back.fold == orig.fold

    def test_folds_survive(self, tmp_path, coarse_records):
        tagged = io.apply_folds(coarse_records, FoldAssignment(3, (0, 1, 2, 0, 1, 2)))
        io.save_dataset(tagged, tmp_path)
        loaded = io.load_dataset(tmp_path)
        assert [r.fold for r in loaded] == [0, 1, 2, 0, 1, 2]
        assert io.read_json(tmp_path / "manifest.json")["k"] == 3

    def test_empty_manifest_rejected(self, tmp_path):
        io.write_json(tmp_path / "manifest.json", {"patients": []})
        with pytest.raises(EmptyDataset):
            io.load_dataset(tmp_path)

    def test_missing_dir_is_io_failure(self, tmp_path):
        with pytest.raises(IoFailure):
            io.load_dataset(tmp_path / "nope")

    def test_apply_folds_length_mismatch(self, coarse_records):
        with pytest.raises(InvalidConfig):
            io.apply_folds(coarse_records, FoldAssignment(2, (0, 1)))


class TestModelFiles:
    def test_round_trip_bitwise(self, tmp_path, tiny_config):
        model = build_lunet(tiny_config, rng_seed=3)
        path = tmp_path / "model.npz"
        io.save_model(model, path)
        back = io.load_model(path)
        assert back.config == model.config
        assert set(back.params) == set(model.params)
        for name in model.params:
            assert np.array_equal(back.params[name].data, model.params[name].data)

    def test_loaded_model_runs(self, tmp_path, tiny_config):
        model = build_lunet(tiny_config, rng_seed=3)
        path = tmp_path / "model.npz"
        io.save_model(model, path)
        back = io.load_model(path)
        img = np.random.default_rng(0).random((1, 1, 64, 64)).astype(np.float32)
        a = lunet_forward(model, dc.Tensor(img))
        b = lunet_forward(back, dc.Tensor(img))
        assert np.array_equal(a.box.data, b.box.data)

    def test_missing_parameter_rejected(self, tmp_path, tiny_config):
        model = build_lunet(tiny_config, rng_seed=3)
        path = tmp_path / "model.npz"
        io.save_model(model, path)
        trimmed = {k: t.data for k, t in model.params.items()}
        trimmed.pop(sorted(trimmed)[0])
        save_params(path, {k: dc.Tensor(v) for k, v in trimmed.items()})
        with pytest.raises(ShapeMismatch):
            io.load_model(path)

    def test_wrong_shape_rejected(self, tmp_path, tiny_config):
        model = build_lunet(tiny_config, rng_seed=3)
        path = tmp_path / "model.npz"
        io.save_model(model, path)
        mangled = {k: dc.Tensor(t.data) for k, t in model.params.items()}
        first = sorted(mangled)[0]
        mangled[first] = dc.Tensor(np.zeros((2, 2), dtype=np.float32))
        save_params(path, mangled)
        with pytest.raises(ShapeMismatch):
            io.load_model(path)

    def test_missing_sidecar_is_io_failure(self, tmp_path):
        with pytest.raises(IoFailure):
            io.load_model(tmp_path / "absent.npz")


class TestConfigDicts:
    def test_round_trip(self, tiny_config):
        d = io.lunet_config_to_dict(tiny_config)
        assert io.lunet_config_from_dict(d) == tiny_config

    def test_unknown_field_rejected(self, tiny_config):
        d = io.lunet_config_to_dict(tiny_config)
        d["dropout"] = 0.5
        with pytest.raises(InvalidConfig):
            io.lunet_config_from_dict(d)

    def test_missing_fields_use_defaults(self):
        cfg = io.lunet_config_from_dict({})
        assert cfg.margin == 0.05
        assert cfg.localizer.mode == "mu"

    def test_json_safe(self, tmp_path, tiny_config):
        path = tmp_path / "cfg.json"
        io.write_json(path, io.lunet_config_to_dict(tiny_config))
        assert io.lunet_config_from_dict(io.read_json(path)) == tiny_config


class TestBoundsDicts:
    def test_round_trip(self):
        bounds = default_bounds()
        bounds_dict = io.bounds_to_dict(bounds)
        back = io.bounds_from_dict(bounds_dict)
        assert dict(back.dm_max) == dict(bounds.dm_max)
        assert dict(back.dh_max) == dict(bounds.dh_max)
        assert back.simplicity_min == bounds.simplicity_min
        assert back.convexity_min == bounds.convexity_min
        assert isinstance(bounds_dict["dm_max"], dict)

    def test_missing_field_rejected(self):
        with pytest.raises(InvalidConfig):
            io.bounds_from_dict({"dm_max": {"endo": 1.0}})


class TestJsonHelpers:
    def test_bad_json_is_io_failure(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(IoFailure):
            io.read_json(path)

    def test_unwritable_path_is_io_failure(self, tmp_path):
        with pytest.raises(IoFailure):
            io.write_json(tmp_path / "no" / "such" / "dir.json", {})
