"""Command-line entry point.

Exit codes: 0 success, 1 validation/usage errors, 2 numeric divergence.

LUNETKIT_THREADS caps both the fold worker pool and the BLAS thread pools;
the BLAS caps only stick if they are set before numpy loads, which is why
this module touches the environment before importing anything numeric.
"""

from __future__ import annotations

import argparse
import os
import sys


def _cap_threads() -> None:
    n = os.environ.get("LUNETKIT_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, n)


_cap_threads()

import numpy as np  # noqa: E402

from .errors import DivergedLoss, EmptyDataset, InvalidConfig, LunetError  # noqa: E402
from .gradsuite import run_suite, tolerance_for  # noqa: E402
from .harness import (  # noqa: E402
    TrainConfig,
    cross_validate,
    default_bounds,
    evaluate,
    report_from_dict,
    report_render,
    report_to_dict,
    train,
)
from .io import (  # noqa: E402
    apply_folds,
    bounds_from_dict,
    load_dataset,
    load_model,
    lunet_config_from_dict,
    read_json,
    save_dataset,
    save_model,
    write_json,
)
from .nets import LUNetConfig, build_lunet  # noqa: E402
from .phantom import FoldAssignment, PhantomParams, generate_dataset, stratified_folds  # noqa: E402


class _Parser(argparse.ArgumentParser):
    # usage problems are validation errors: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_configs(path):
    """Config file carries {'net': {...}, 'train': {...}}; both optional."""
    payload = read_json(path) if path else {}
    if not isinstance(payload, dict):
        raise InvalidConfig(f"config file {path!r} must hold a JSON object")
    net = payload.get("net")
    net_config = lunet_config_from_dict(net) if net else LUNetConfig()
    train_config = TrainConfig.from_dict(payload.get("train", {}))
    return net_config, train_config


def _cmd_generate(args):
    # pose jitter is in pixels; keep it a fixed fraction of the frame
    params = PhantomParams(image_size=args.size, spacing_mm=args.spacing,
                           translation_px=10.0 * args.size / 256.0)
    records = generate_dataset(params, n=args.n, master_seed=args.seed)
    if args.folds:
        records = apply_folds(records, stratified_folds(records, k=args.folds, seed=args.seed))
    save_dataset(records, args.out)
    print(f"wrote {len(records)} patients to {args.out}")
    return 0


def _split_by_fold(records, fold):
    val = [r for r in records if r.fold == fold]
    rest = [r for r in records if r.fold != fold]
    if not val:
        raise EmptyDataset(f"no records in fold {fold}")
    return rest, val


def _cmd_train(args):
    net_config, train_config = _load_configs(args.config)
    records = load_dataset(args.data)
    if args.fold is not None:
        train_set, val_set = _split_by_fold(records, args.fold)
    else:
        rng = np.random.default_rng(train_config.seed)
        order = rng.permutation(len(records))
        n_val = max(1, round(train_config.val_fraction * len(records)))
        if n_val >= len(records):
            raise EmptyDataset("validation split leaves no training records")
        val_set = [records[i] for i in order[:n_val]]
        train_set = [records[i] for i in order[n_val:]]
    model = build_lunet(net_config, rng_seed=train_config.seed)
    model, history = train(model, train_set, val_set, train_config)
    save_model(model, args.out)
    write_json(args.out + ".history.json", {
        "train": history.train, "val": history.val,
        "best_epoch": history.best_epoch, "stopped_epoch": history.stopped_epoch,
        "monitor": history.monitor,
    })
    print(f"trained {history.stopped_epoch} epochs "
          f"(best {history.best_epoch}, val {history.val[history.best_epoch]:.4f}); "
          f"model at {args.out}")
    return 0


def _cmd_cross_validate(args):
    net_config, train_config = _load_configs(args.config)
    records = load_dataset(args.data)
    fold_ids = [r.fold for r in records]
    if any(f is None for f in fold_ids):
        raise InvalidConfig("dataset has no stored fold assignment; rerun generate --folds")
    folds = FoldAssignment(max(fold_ids) + 1, tuple(fold_ids))
    result = cross_validate(records, folds, net_config, train_config)
    os.makedirs(args.out, exist_ok=True)
    for f, report in enumerate(result.per_fold):
        write_json(os.path.join(args.out, f"fold{f}.report.json"), report_to_dict(report))
    for f, model in enumerate(result.models):
        save_model(model, os.path.join(args.out, f"model_fold{f}.npz"))
    report_render(result.pooled, os.path.join(args.out, "pooled"), cases=result.cases)
    print(f"cross-validated {folds.k} folds over {len(records)} patients; "
          f"reports in {args.out}")
    return 0


def _cmd_evaluate(args):
    model = load_model(args.model)
    records = load_dataset(args.data)
    bounds = bounds_from_dict(read_json(args.bounds)) if args.bounds else default_bounds()
    result = evaluate(model, records, bounds)
    report_render(result.report, args.out, cases=result.cases)
    print(f"evaluated {len(records)} patients; report in {args.out}")
    return 0


def _cmd_grad_check(args):
    names = [args.op] if args.op else None
    results = run_suite(names, configs=args.configs, seed=args.seed)
    worst_bad = None
    for name, err in results.items():
        ok = err <= tolerance_for(name)
        print(f"{name:24s} max rel err {err:.3e}  "
              f"[{'ok' if ok else 'FAIL'} @ {tolerance_for(name):.0e}]")
        if not ok:
            worst_bad = name
    if worst_bad is not None:
        print(f"gradient check failed at {worst_bad}", file=sys.stderr)
        return 2
    return 0


def _cmd_report(args):
    payload = read_json(os.path.join(args.in_dir, "report.json"))
    report = report_from_dict(payload)
    report_render(report, args.out)
    print(f"re-rendered report into {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lunetkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a phantom dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--spacing", type=float, default=0.5)
    p.add_argument("--folds", type=int, default=0, help="also assign stratified folds")
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True)
    p.add_argument("--fold", type=int, default=None, help="held-out validation fold")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("cross-validate", help="k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_cross_validate)

    p = sub.add_parser("evaluate", help="score a trained model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bounds", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("grad-check", help="finite-difference gradient battery")
    p.add_argument("--op", default=None)
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_grad_check)

    p = sub.add_parser("report", help="re-render a saved report")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except DivergedLoss as exc:
        print(f"lunetkit: diverged: {exc}", file=sys.stderr)
        return 2
    except LunetError as exc:
        print(f"lunetkit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
