"""Training, cross-validation, evaluation, and report rendering."""

from .training import Adam, Sample, TrainConfig, TrainHistory, make_samples, train
from .evaluation import EvalResult, OverlayCase, RunReport, default_bounds, evaluate, summarize
from .crossval import CrossValResult, cross_validate, worker_count
from .report import report_from_dict, report_render, report_to_dict

__all__ = [
    "Adam",
    "CrossValResult",
    "EvalResult",
    "OverlayCase",
    "RunReport",
    "Sample",
    "TrainConfig",
    "TrainHistory",
    "cross_validate",
    "default_bounds",
    "evaluate",
    "make_samples",
    "report_from_dict",
    "report_render",
    "report_to_dict",
    "summarize",
    "train",
    "worker_count",
]
