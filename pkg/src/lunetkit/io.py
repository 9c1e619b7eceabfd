"""Artifact persistence: PNG datasets, JSON sidecars, model and config files.

Dataset layout on disk:

    dataset/
      manifest.json                    patient ids, fold count
      patient0000/
        2CH_ED_img.png                  16-bit grayscale
        2CH_ED_mask.png                 8-bit labels {0,1,2}
        ... (all four view/instant pairs)
        info.json                       spacing, boxes, volumes, labels

Images quantize [0,1] to 16 bits; masks and every ground-truth number
round-trip exactly, so reloaded records pass the same invariants as
freshly generated ones.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyDataset, InvalidConfig, IoFailure, ShapeMismatch
from .grid import BoundingBox, ImageGrid, LabelMask, PixelSpacing
from .losses import LossWeights
from .metrics import OutlierBounds
from .nets import LocalizerConfig, LUNetConfig, LUNetModel, UNetConfig, build_lunet
from .phantom import INSTANTS, VIEWS, FoldAssignment, PatientRecord
from .diffcore import load_params, save_params


def write_json(path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"{path} is not valid JSON: {exc}") from exc


def _write_png(path: Path, arr: np.ndarray) -> None:
    try:
        Image.fromarray(arr).save(path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def save_dataset(records, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        pdir = out / rec.patient_id
        pdir.mkdir(exist_ok=True)
        info = {
            "dx_mm": rec.masks[(VIEWS[0], INSTANTS[0])].spacing.dx,
            "dy_mm": rec.masks[(VIEWS[0], INSTANTS[0])].spacing.dy,
            "bbox": {},
            "edv": rec.edv,
            "esv": rec.esv,
            "ef": rec.ef,
            "quality": rec.quality,
            "ef_category": rec.ef_category,
            "fold": rec.fold,
        }
        for view in VIEWS:
            for instant in INSTANTS:
                key = (view, instant)
                stem = f"{view}_{instant}"
                img16 = np.round(rec.images[key].pixels * 65535.0).astype(np.uint16)
                _write_png(pdir / f"{stem}_img.png", img16)
                _write_png(pdir / f"{stem}_mask.png", rec.masks[key].labels.astype(np.uint8))
                info["bbox"][stem] = list(rec.boxes[key].as_tuple())
        write_json(pdir / "info.json", info)
    folds = [rec.fold for rec in records if rec.fold is not None]
    write_json(out / "manifest.json", {
        "patients": [rec.patient_id for rec in records],
        "k": max(folds) + 1 if folds else None,
    })


def load_dataset(in_dir) -> list[PatientRecord]:
    root = Path(in_dir)
    manifest = read_json(root / "manifest.json")
    if not manifest.get("patients"):
        raise EmptyDataset(f"{in_dir} lists no patients")
    records = []
    for pid in manifest["patients"]:
        pdir = root / pid
        info = read_json(pdir / "info.json")
        spacing = PixelSpacing(info["dx_mm"], info["dy_mm"])
        images, masks, boxes = {}, {}, {}
        for view in VIEWS:
            for instant in INSTANTS:
                stem = f"{view}_{instant}"
                img = _read_png(pdir / f"{stem}_img.png").astype(np.float64) / 65535.0
                images[(view, instant)] = ImageGrid(img, spacing)
                labels = _read_png(pdir / f"{stem}_mask.png").astype(np.int64)
                masks[(view, instant)] = LabelMask(labels, spacing)
                boxes[(view, instant)] = BoundingBox(*info["bbox"][stem])
        records.append(PatientRecord(
            pid, images, masks, boxes, info["edv"], info["esv"], info["ef"],
            info["quality"], info["ef_category"], info["fold"],
        ))
    return records


def apply_folds(records, assignment: FoldAssignment) -> list[PatientRecord]:
    if len(records) != len(assignment.folds):
        raise InvalidConfig(
            f"{len(assignment.folds)} fold entries for {len(records)} records"
        )
    return [rec.with_fold(f) for rec, f in zip(records, assignment.folds)]


# --- config and model files -----------------------------------------------


def lunet_config_to_dict(cfg: LUNetConfig) -> dict:
    return dataclasses.asdict(cfg)


def lunet_config_from_dict(d: dict) -> LUNetConfig:
    """Missing fields fall back to their defaults; unknown fields error."""

    def build(cls, payload, tuple_keys=()):
        kwargs = dict(payload)
        for key in tuple_keys:
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise InvalidConfig(f"bad model config: {exc}") from exc

    d = dict(d)
    loc = dict(d.pop("localizer", {}))
    if "backbone" in loc:
        loc["backbone"] = build(UNetConfig, loc["backbone"], ("input_size",))
    d["localizer"] = build(LocalizerConfig, loc, ("head_units",))
    if "segmenter" in d:
        d["segmenter"] = build(UNetConfig, d["segmenter"], ("input_size",))
    return build(LUNetConfig, d, ("crop_size",))


def save_model(model: LUNetModel, path) -> None:
    """Parameters to `path`, architecture to `path + '.json'`."""
    save_params(path, model.params)
    write_json(str(path) + ".json", lunet_config_to_dict(model.config))


def load_model(path) -> LUNetModel:
    cfg = lunet_config_from_dict(read_json(str(path) + ".json"))
    arrays = load_params(path)
    model = build_lunet(cfg, rng_seed=0)
    if set(arrays) != set(model.params):
        raise ShapeMismatch(f"parameter manifest of {path} does not match its config")
    for name, tensor in model.params.items():
        if arrays[name].shape != tensor.data.shape:
            raise ShapeMismatch(f"{name}: file {arrays[name].shape} vs config {tensor.data.shape}")
        tensor.data = arrays[name]
    return model


def bounds_to_dict(bounds: OutlierBounds) -> dict:
    return {
        "dm_max": dict(bounds.dm_max),
        "dh_max": dict(bounds.dh_max),
        "simplicity_min": bounds.simplicity_min,
        "convexity_min": bounds.convexity_min,
    }


def bounds_from_dict(d: dict) -> OutlierBounds:
    try:
        return OutlierBounds(
            dm_max=d["dm_max"], dh_max=d["dh_max"],
            simplicity_min=d["simplicity_min"], convexity_min=d["convexity_min"],
        )
    except KeyError as exc:
        raise InvalidConfig(f"bounds file missing field {exc}") from exc
