"""K-fold cross-validation driver.

Fold f holds out the records assigned to f, validates on fold (f+1) mod k,
and trains on the rest (for k=2 a deterministic fraction of the remaining
records serves as validation instead). Each fold derives its own seed from
(config seed, fold), so results do not depend on worker count or order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ..errors import InvalidK
from ..metrics import OutlierBounds
from ..nets import LUNetConfig, build_lunet
from ..phantom import FoldAssignment
from .evaluation import EvalResult, RunReport, default_bounds, evaluate
from .training import TrainConfig, train


@dataclass
class CrossValResult:
    per_fold: list  # RunReport per fold, index = fold
    pooled: RunReport
    models: list  # trained LUNetModel per fold
    cases: list  # overlay cases pooled over held-out records


def worker_count() -> int:
    """LUNETKIT_THREADS caps the fold worker pool; default 1."""
    try:
        return max(1, int(os.environ.get("LUNETKIT_THREADS", "1")))
    except ValueError:
        return 1


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _run_fold(args):
    records, folds, f, net_config, config, bounds = args
    k = folds.k
    # canonical order: results must not depend on how the caller ordered records
    pairs = sorted(zip(records, folds.folds), key=lambda p: p[0].patient_id)
    held = [r for r, ff in pairs if ff == f]
    rest = [(r, ff) for r, ff in pairs if ff != f]
    if k >= 3:
        val_fold = (f + 1) % k
        val = [r for r, ff in rest if ff == val_fold]
        tr = [r for r, ff in rest if ff != val_fold]
    else:
        pool = [r for r, _ in rest]
        n_val = max(1, round(config.val_fraction * len(pool)))
        if n_val >= len(pool):
            raise InvalidK(f"fold {f}: no training records left after validation split")
        val, tr = pool[:n_val], pool[n_val:]

    fold_config = replace(config, seed=_fold_seed(config.seed, f))
    model = build_lunet(net_config, rng_seed=fold_config.seed)
    model, history = train(model, tr, val, fold_config)
    result = evaluate(model, held, bounds, fold=f)
    result.report.history.append({
        "fold": f, "train": history.train, "val": history.val,
        "best_epoch": history.best_epoch, "stopped_epoch": history.stopped_epoch,
        "monitor": history.monitor,
    })
    result.report.meta["fold"] = f
    return f, result, model


def cross_validate(records, folds: FoldAssignment, net_config: LUNetConfig,
                   config: TrainConfig, bounds: OutlierBounds | None = None,
                   workers: int | None = None) -> CrossValResult:
    records = list(records)
    if len(records) != len(folds.folds):
        raise InvalidK(f"{len(folds.folds)} fold entries for {len(records)} records")
    bounds = bounds or default_bounds()
    workers = worker_count() if workers is None else max(1, workers)
    jobs = [(records, folds, f, net_config, config, bounds) for f in range(folds.k)]
    if workers == 1:
        outcomes = [_run_fold(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, folds.k)) as pool:
            outcomes = list(pool.map(_run_fold, jobs))
    outcomes.sort(key=lambda item: item[0])

    pooled = RunReport(meta={
        "k": folds.k,
        "seed": config.seed,
        "margin": net_config.margin,
        "mode": "cross-validation",
    })
    per_fold, models, cases = [], [], []
    for _, result, model in outcomes:
        report = result.report
        per_fold.append(report)
        models.append(model)
        cases.extend(result.cases)
        pooled.localization.extend(report.localization)
        pooled.segmentation.extend(report.segmentation)
        pooled.outliers.extend(report.outliers)
        pooled.clinical.extend(report.clinical)
        pooled.history.extend(report.history)
    return CrossValResult(per_fold, pooled, models, cases)
