"""Report serialization and rendering.

report_to_dict/report_from_dict are exact inverses, so a report written as
JSON loads back equal to the original. report_render writes the delimited
tables (one CSV per report section), a JSON summary with published
full-scale reference numbers attached as annotations, loss curves, and one
overlay PNG per evaluated acquisition.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

from ..errors import EmptyDataset, IoFailure
from ..refvals import CAMUS_REFERENCE
from .evaluation import RunReport, summarize

# fixed output metadata keeps PNG bytes reproducible run to run
_PNG_META = {"Software": "lunetkit"}

# segmentation and clinical columns are a fixed external contract; the
# richer rows (fold, failure tags) stay available in report.json
_COLUMNS = {
    "localization": ("patient_id", "view", "instant", "fold", "iou", "e_xc_mm",
                     "e_yc_mm", "e_h_mm", "e_w_mm", "bb_out", "clipped", "failure"),
    "segmentation": ("patient_id", "view", "instant", "structure", "dice",
                     "dm_mm", "dh_mm", "simplicity", "convexity", "geo_outlier",
                     "ana_outlier"),
    "outliers": ("patient_id", "fold", "geometric", "anatomical", "both", "failure"),
    "clinical": ("patient_id", "edv_pred", "edv_ref", "esv_pred",
                 "esv_ref", "ef_pred", "ef_ref"),
}


def report_to_dict(report: RunReport) -> dict:
    return {
        "localization": [dict(r) for r in report.localization],
        "segmentation": [dict(r) for r in report.segmentation],
        "outliers": [dict(r) for r in report.outliers],
        "clinical": [dict(r) for r in report.clinical],
        "history": [dict(h) for h in report.history],
        "meta": dict(report.meta),
    }


def report_from_dict(payload: dict) -> RunReport:
    return RunReport(
        localization=[dict(r) for r in payload.get("localization", [])],
        segmentation=[dict(r) for r in payload.get("segmentation", [])],
        outliers=[dict(r) for r in payload.get("outliers", [])],
        clinical=[dict(r) for r in payload.get("clinical", [])],
        history=[dict(h) for h in payload.get("history", [])],
        meta=dict(payload.get("meta", {})),
    )


def _write_csv(path: str, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(col) is None else row[col]
                             for col in columns])


def _save(fig, path: str) -> None:
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def _loss_curves(report: RunReport, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    for entry in report.history:
        fold = entry.get("fold")
        tag = "" if fold is None else f"fold {fold} "
        train = entry.get("train", [])
        val = entry.get("val", [])
        ax.plot(range(1, len(train) + 1), train, label=tag + "train")
        # val[0] is the pre-training loss, hence the offset-0 axis
        ax.plot(range(len(val)), val, linestyle="--", label=tag + "val")
        best = entry.get("best_epoch")
        if best is not None and best < len(val):
            ax.plot([best], [val[best]], marker="o", color="black", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("training history (dot = selected epoch)")
    if report.history:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def _box_patch(box, **kwargs):
    return Rectangle((box.y_min, box.x_min), box.y_max - box.y_min,
                     box.x_max - box.x_min, fill=False, **kwargs)


def _overlay(case, path: str) -> None:
    fig, ax = plt.subplots(figsize=(4.0, 4.0), dpi=120)
    ax.imshow(case.image, cmap="gray", interpolation="nearest",
              vmin=0.0, vmax=max(1.0, float(case.image.max())))
    for mask, color, style in ((case.ref_mask, "lime", "solid"),
                               (case.pred_mask, "red", "dashed")):
        ax.contour(mask.labels == 1, levels=[0.5], colors=[color],
                   linewidths=1.0, linestyles=[style])
        ax.contour(mask.labels >= 1, levels=[0.5], colors=[color],
                   linewidths=0.6, linestyles=[style])
    ax.add_patch(_box_patch(case.ref_box, edgecolor="lime", linewidth=0.8))
    ax.add_patch(_box_patch(case.pred_box, edgecolor="yellow", linewidth=0.8,
                            linestyle="dashed"))
    ax.set_title(f"{case.patient_id} {case.view} {case.instant}", fontsize=8)
    ax.set_axis_off()
    fig.tight_layout()
    _save(fig, path)


def report_render(report: RunReport, out_dir: str, cases=None) -> list[str]:
    """Write CSV tables, JSON, loss curves, and overlays under out_dir.

    Returns the written paths. Refuses to render a report with no rows.
    """
    if not report.localization:
        raise EmptyDataset("report has no evaluated records")
    try:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for section, columns in _COLUMNS.items():
            path = os.path.join(out_dir, section + ".csv")
            _write_csv(path, columns, getattr(report, section))
            written.append(path)

        summary = {
            "summary": summarize(report),
            "meta": report.meta,
            "reference_annotations": CAMUS_REFERENCE,
        }
        path = os.path.join(out_dir, "summary.json")
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        written.append(path)

        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            json.dump(report_to_dict(report), fh, indent=2, sort_keys=True,
                      ensure_ascii=False)
            fh.write("\n")
        written.append(path)

        path = os.path.join(out_dir, "loss_curves.png")
        _loss_curves(report, path)
        written.append(path)

        for case in cases or []:
            name = f"{case.patient_id}_{case.view}_{case.instant}.png"
            path = os.path.join(out_dir, "overlays", name)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            _overlay(case, path)
            written.append(path)
        return written
    except OSError as exc:
        raise IoFailure(f"cannot render report into {out_dir!r}: {exc}") from exc
