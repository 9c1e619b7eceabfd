"""Per-record evaluation: localization, segmentation, outliers, volumes.

Rows use None (never NaN) for values a failed prediction cannot provide,
so reports stay JSON-round-trippable and comparable. A record whose
forward pass raises is kept as a row with a failure tag and counts as an
outlier instead of aborting the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..clinical import agreement_stats, ejection_fraction, simpson_biplane
from ..errors import EmptyDataset, LunetError
from ..grid import (
    BoundingBox,
    LabelMask,
    bbox_errors,
    encompasses,
    expand_bbox,
    expansion_clipped,
    iou,
    mask_to_contour,
)
from ..losses import dynamic_roi_reference
from ..metrics import (
    STRUCTURES,
    OutlierBounds,
    SegScores,
    classify_outliers,
    convexity,
    dice,
    hausdorff,
    mean_absolute_distance,
    simplicity,
)
from ..nets import LUNetModel, lunet_forward, remap_to_original
from ..phantom import INSTANTS, VIEWS


def default_bounds() -> OutlierBounds:
    """Liberal desk-scale outlier bounds; real studies should tune these."""
    return OutlierBounds(
        dm_max={"endo": 4.0, "epi": 4.0},
        dh_max={"endo": 10.0, "epi": 10.0},
        simplicity_min=0.6,
        convexity_min=0.7,
    )


@dataclass
class RunReport:
    """Row-level results; aggregate tables come from summarize()."""

    localization: list = field(default_factory=list)
    segmentation: list = field(default_factory=list)
    outliers: list = field(default_factory=list)
    clinical: list = field(default_factory=list)
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OverlayCase:
    """Everything one rendered overlay needs."""

    patient_id: str
    view: str
    instant: str
    image: np.ndarray
    ref_mask: LabelMask
    pred_mask: LabelMask
    ref_box: BoundingBox
    pred_box: BoundingBox  # the crop actually used (margin included)


@dataclass
class EvalResult:
    report: RunReport
    cases: list


def _predict(model, record, key, teacher_forced, margin, crop_size):
    """One acquisition -> (pred LabelMask, tight pred box, crop box, clipped)."""
    ref_mask = record.masks[key]
    h, w = ref_mask.labels.shape
    ref_box = record.boxes[key]
    if model is None and not teacher_forced:
        crop_px = expand_bbox(ref_box, margin, (h, w))
        return ref_mask, ref_box, crop_px, expansion_clipped(ref_box, margin, (h, w))
    if model is None:
        # teacher-forced box, identity segmenter: crop the reference labels
        # into the ROI and remap them back (the resampling round trip)
        crop_px = expand_bbox(ref_box, margin, (h, w))
        norm = np.array([crop_px.x_min / h, crop_px.x_max / h,
                         crop_px.y_min / w, crop_px.y_max / w])
        roi = dynamic_roi_reference(ref_mask, norm, crop_size)
        pred = remap_to_original(roi.labels, crop_px, (h, w), ref_mask.spacing)
        return pred, ref_box, crop_px, expansion_clipped(ref_box, margin, (h, w))

    img = record.images[key].pixels.astype(np.float32)[None, None]
    force = None
    if teacher_forced:
        crop_px = expand_bbox(ref_box, model.config.margin, (h, w))
        force = np.array([[crop_px.x_min / h, crop_px.x_max / h,
                           crop_px.y_min / w, crop_px.y_max / w]], dtype=np.float32)
    out = lunet_forward(model, dc.Tensor(img), remap=True, force_boxes=force)
    pred = LabelMask(out.label_maps[0], ref_mask.spacing)
    tight_norm = dc.sanitize_values(out.box.data, h, w)[0]
    tight_px = BoundingBox(tight_norm[0] * h, tight_norm[1] * h,
                           tight_norm[2] * w, tight_norm[3] * w)
    sane = out.box_sane[0]
    crop_px = BoundingBox(sane[0] * h, sane[1] * h, sane[2] * w, sane[3] * w)
    clipped = expansion_clipped(tight_px, model.config.margin, (h, w))
    return pred, tight_px, crop_px, clipped


def _none_seg_rows(pid, fold, failure):
    rows = []
    for view in VIEWS:
        for instant in INSTANTS:
            for structure in STRUCTURES:
                rows.append({
                    "patient_id": pid, "view": view, "instant": instant,
                    "structure": structure, "fold": fold, "dice": None,
                    "dm_mm": None, "dh_mm": None, "simplicity": None,
                    "convexity": None, "geo_outlier": True, "ana_outlier": True,
                    "failure": failure,
                })
    return rows


def evaluate(model, records, bounds: OutlierBounds, teacher_forced: bool = False,
             margin: float = 0.05, crop_size: tuple[int, int] = (128, 128),
             fold: int | None = None) -> EvalResult:
    """Score records; model=None scores the references against themselves
    (teacher_forced=False) or the crop-remap round trip (teacher_forced=True).
    """
    records = list(records)
    if not records:
        raise EmptyDataset("nothing to evaluate")
    if model is not None:
        margin = model.config.margin
        crop_size = model.config.crop_size
    report = RunReport(meta={
        "mode": ("model" if model is not None else
                 "roundtrip" if teacher_forced else "reference"),
        "teacher_forced": teacher_forced,
        "margin": margin,
        "crop_size": list(crop_size),
    })
    cases = []
    for rec in records:
        fold_id = rec.fold if fold is None else fold
        preds: dict = {}
        failure = None
        try:
            for view in VIEWS:
                for instant in INSTANTS:
                    preds[(view, instant)] = _predict(
                        model, rec, (view, instant), teacher_forced, margin, crop_size
                    )
        except (LunetError, FloatingPointError) as exc:
            failure = type(exc).__name__

        if failure is not None:
            for view in VIEWS:
                for instant in INSTANTS:
                    report.localization.append({
                        "patient_id": rec.patient_id, "view": view, "instant": instant,
                        "fold": fold_id, "iou": None, "e_xc_mm": None, "e_yc_mm": None,
                        "e_h_mm": None, "e_w_mm": None, "bb_out": True,
                        "clipped": False, "failure": failure,
                    })
            report.segmentation.extend(_none_seg_rows(rec.patient_id, fold_id, failure))
            report.outliers.append({
                "patient_id": rec.patient_id, "fold": fold_id, "geometric": True,
                "anatomical": True, "both": True, "failure": failure,
            })
            report.clinical.append({
                "patient_id": rec.patient_id, "fold": fold_id,
                "edv_pred": None, "edv_ref": None, "esv_pred": None,
                "esv_ref": None, "ef_pred": None, "ef_ref": None,
                "failure": failure,
            })
            continue

        scores = []
        shapes = {}
        seg_rows = []
        for view in VIEWS:
            for instant in INSTANTS:
                key = (view, instant)
                pred, tight_px, crop_px, clipped = preds[key]
                ref_mask = rec.masks[key]
                ref_box = rec.boxes[key]
                shapes[key] = pred
                e_xc, e_yc, e_h, e_w = bbox_errors(tight_px, ref_box, ref_mask.spacing)
                report.localization.append({
                    "patient_id": rec.patient_id, "view": view, "instant": instant,
                    "fold": fold_id, "iou": iou(tight_px, ref_box),
                    "e_xc_mm": e_xc, "e_yc_mm": e_yc, "e_h_mm": e_h, "e_w_mm": e_w,
                    "bb_out": not encompasses(crop_px, ref_mask, "epi"),
                    "clipped": bool(clipped), "failure": None,
                })
                cases.append(OverlayCase(
                    rec.patient_id, view, instant, rec.images[key].pixels,
                    ref_mask, pred, ref_box, crop_px,
                ))
                for structure in STRUCTURES:
                    row = {
                        "patient_id": rec.patient_id, "view": view, "instant": instant,
                        "structure": structure, "fold": fold_id,
                        "dice": dice(pred, ref_mask, structure),
                        "dm_mm": None, "dh_mm": None,
                        "simplicity": None, "convexity": None,
                        "geo_outlier": None, "ana_outlier": None, "failure": None,
                    }
                    try:
                        pc = mask_to_contour(pred, structure)
                        rc = mask_to_contour(ref_mask, structure)
                        row["dm_mm"] = mean_absolute_distance(pc, rc)
                        row["dh_mm"] = hausdorff(pc, rc)
                        row["simplicity"] = simplicity(pred, structure)
                        row["convexity"] = convexity(pred, structure)
                    except LunetError as exc:
                        row["failure"] = type(exc).__name__
                    scores.append(SegScores(
                        view, instant, structure,
                        row["dice"],
                        np.nan if row["dm_mm"] is None else row["dm_mm"],
                        np.nan if row["dh_mm"] is None else row["dh_mm"],
                    ))
                    seg_rows.append(row)

        flags = classify_outliers(scores, bounds, shapes)
        for row in seg_rows:
            row["geo_outlier"] = flags.geometric
            row["ana_outlier"] = flags.anatomical
        report.segmentation.extend(seg_rows)
        report.outliers.append({
            "patient_id": rec.patient_id, "fold": fold_id,
            "geometric": flags.geometric, "anatomical": flags.anatomical,
            "both": flags.both, "failure": None,
        })

        clin = {
            "patient_id": rec.patient_id, "fold": fold_id,
            "edv_pred": None, "edv_ref": None, "esv_pred": None,
            "esv_ref": None, "ef_pred": None, "ef_ref": None, "failure": None,
        }
        try:
            clin["edv_pred"] = simpson_biplane(preds[("2CH", "ED")][0], preds[("4CH", "ED")][0])
            clin["esv_pred"] = simpson_biplane(preds[("2CH", "ES")][0], preds[("4CH", "ES")][0])
            clin["ef_pred"] = ejection_fraction(clin["edv_pred"], clin["esv_pred"])
            # like-for-like: reference volumes from the reference masks via
            # the same pipeline (the analytic truth lives in the generator)
            clin["edv_ref"] = simpson_biplane(rec.masks[("2CH", "ED")], rec.masks[("4CH", "ED")])
            clin["esv_ref"] = simpson_biplane(rec.masks[("2CH", "ES")], rec.masks[("4CH", "ES")])
            clin["ef_ref"] = ejection_fraction(clin["edv_ref"], clin["esv_ref"])
        except LunetError as exc:
            clin["failure"] = type(exc).__name__
        report.clinical.append(clin)

    return EvalResult(report, cases)


def _mean_sd(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None, 0
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0)), len(vals)


def summarize(report: RunReport) -> dict:
    """Aggregate tables; percentages are exactly count/total*100."""
    loc = report.localization
    seg = report.segmentation
    out: dict = {"n_acquisitions": len(loc), "n_patients": len(report.outliers)}

    iou_mean, iou_sd, n_ok = _mean_sd([r["iou"] for r in loc])
    bb_out = sum(1 for r in loc if r["bb_out"])
    clipped = sum(1 for r in loc if r["clipped"])
    failures = sum(1 for r in loc if r["failure"] is not None)
    loc_table = {
        "iou_mean": iou_mean, "iou_sd": iou_sd, "n_scored": n_ok,
        "bb_out_count": bb_out,
        "bb_out_pct": 100.0 * bb_out / len(loc) if loc else 0.0,
        "clipped_count": clipped, "failure_count": failures,
    }
    for key in ("e_xc_mm", "e_yc_mm", "e_h_mm", "e_w_mm"):
        mean, sd, _ = _mean_sd([r[key] for r in loc])
        loc_table[key + "_mean"] = mean
        loc_table[key + "_sd"] = sd
    out["localization"] = loc_table

    seg_table = {}
    for structure in STRUCTURES:
        rows = [r for r in seg if r["structure"] == structure]
        entry = {"n": len(rows), "failure_count": sum(1 for r in rows if r["failure"])}
        for key, label in (("dice", "dice"), ("dm_mm", "dm_mm"), ("dh_mm", "dh_mm"),
                           ("simplicity", "simplicity"), ("convexity", "convexity")):
            mean, sd, _ = _mean_sd([r[key] for r in rows])
            entry[label + "_mean"] = mean
            entry[label + "_sd"] = sd
        seg_table[structure] = entry
    out["segmentation"] = seg_table

    n_pat = len(report.outliers)
    counts = {
        "geometric": sum(1 for r in report.outliers if r["geometric"]),
        "anatomical": sum(1 for r in report.outliers if r["anatomical"]),
        "both": sum(1 for r in report.outliers if r["both"]),
    }
    out["outliers"] = {
        **{k + "_count": v for k, v in counts.items()},
        **{k + "_pct": (100.0 * v / n_pat if n_pat else 0.0) for k, v in counts.items()},
        "n_patients": n_pat,
    }

    clin_table = {}
    for index in ("edv", "esv", "ef"):
        pred = [r[index + "_pred"] for r in report.clinical]
        ref = [r[index + "_ref"] for r in report.clinical]
        pairs = [(p, q) for p, q in zip(pred, ref) if p is not None and q is not None]
        if len(pairs) < 3:
            clin_table[index] = {"error": f"only {len(pairs)} scored pairs"}
            continue
        try:
            stats = agreement_stats([p for p, _ in pairs], [q for _, q in pairs])
            clin_table[index] = {"corr": stats.corr, "bias": stats.bias,
                                 "loa": stats.loa, "mae": stats.mae, "n": len(pairs)}
        except LunetError as exc:
            clin_table[index] = {"error": f"{type(exc).__name__}: {exc}"}
    out["clinical"] = clin_table
    return out
