"""Published full-scale reference values for report annotations.

These numbers come from the original CAMUS study (500 patients, full-size
images, GPU training). They are far out of reach for the desk-scale synthetic
experiments this package runs, so reports print them as context only; nothing
in the test suite asserts against them.
"""

from __future__ import annotations

REFERENCE_NOTE = "full-scale CAMUS reference — not asserted"

CAMUS_REFERENCE: dict = {
    "localization": {
        "iou": 0.898,
        "bb_out_pct_m5": 36.0,
        "bb_out_pct_m15": 2.0,
    },
    "segmentation": {
        "endo": {"dm_mm": 1.7, "dh_mm": 5.5},
        "epi": {"dm_mm": 1.5, "dh_mm": 5.1},
        "geometric_outlier_pct": 11.0,
    },
    "clinical": {
        "edv_corr": 0.956,
        "esv_corr": 0.956,
        "ef_corr": 0.829,
        "ef_mae": 5.0,
    },
    "note": REFERENCE_NOTE,
}
