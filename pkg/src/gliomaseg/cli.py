"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Errors are reported as a single machine-parsable line on stderr:
``gliomaseg: <ErrorClass>: <message>``.
"""

import argparse
import json
import sys
from pathlib import Path

from .errors import (
    ConfigError,
    GliomasegError,
    NonScalarLoss,
    NumericFailure,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gliomaseg",
        description="Two-stage brain tumor segmentation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", default=None,
                       help="JSON pipeline configuration file")
        p.add_argument("--preset", default="toy", choices=("toy", "paper"),
                       help="built-in configuration when --config is absent")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides",
                       help="dotted-path config override, e.g. binary.epochs=5")

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--dims", type=int, nargs=3, default=(48, 48, 48))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-binary", help="train the tumor-presence stage")
    add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="JSON-lines training log")

    p = sub.add_parser("train-multiclass", help="train the four-class stage")
    add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--binary-ckpt", default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="JSON-lines training log")
    p.add_argument("--no-roi", action="store_true",
                   help="train on whole volumes (ablation baseline)")

    p = sub.add_parser("predict", help="run the full two-stage pipeline")
    add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--binary-ckpt", required=True)
    p.add_argument("--multiclass-ckpt", required=True)
    p.add_argument("--out", required=True, help="predictions directory")
    p.add_argument("--cases", nargs="*", default=None,
                   help="case ids (default: all cases in the manifest)")
    p.add_argument("--no-tta", action="store_true",
                   help="skip test-time flip augmentation")

    p = sub.add_parser("evaluate", help="score predictions against labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--cases", nargs="*", default=None)

    p = sub.add_parser("report", help="render percentile panel images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--evaluation", required=True, help="JSON report from evaluate")
    p.add_argument("--out", required=True, help="image output directory")

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _load_config(args):
    from .pipeline import PipelineConfig, preset

    if args.config:
        return PipelineConfig.load(args.config, overrides=args.overrides)
    config = preset(args.preset)
    if args.overrides:
        doc = config.to_dict()
        from .pipeline import _apply_override
        for item in args.overrides:
            doc = _apply_override(doc, item)
        config = PipelineConfig.from_dict(doc)
    return config


def _cmd_phantom(args) -> int:
    from .phantom import PhantomSpec, phantom_generate

    spec = PhantomSpec(dims=tuple(args.dims), count=args.count, seed=args.seed)
    path = phantom_generate(spec, args.out)
    print(json.dumps({"manifest": str(path), "count": args.count}))
    return 0


def _cmd_train_binary(args) -> int:
    from .pipeline import train_binary
    from .volume import DatasetManifest

    config = _load_config(args)
    manifest = DatasetManifest.load(args.manifest)
    result = train_binary(config, manifest, args.out, log_path=args.log)
    print(json.dumps({"checkpoint": args.out,
                      "best_val_dice": result["best_val_dice"]}))
    return 0


def _cmd_train_multiclass(args) -> int:
    from .pipeline import train_multiclass
    from .volume import DatasetManifest

    config = _load_config(args)
    manifest = DatasetManifest.load(args.manifest)
    result = train_multiclass(config, manifest, args.out,
                              binary_ckpt=args.binary_ckpt,
                              use_roi=not args.no_roi, log_path=args.log)
    print(json.dumps({"checkpoint": args.out,
                      "best_val_mean_dice": result["best_val_mean_dice"]}))
    return 0


def _cmd_predict(args) -> int:
    from .pipeline import predict_to_dir
    from .volume import DatasetManifest

    config = _load_config(args)
    manifest = DatasetManifest.load(args.manifest)
    case_ids = args.cases if args.cases else manifest.case_ids()
    predict_to_dir(manifest, case_ids, args.binary_ckpt, args.multiclass_ckpt,
                   config, args.out, tta=False if args.no_tta else None)
    print(json.dumps({"predictions": args.out, "cases": len(case_ids)}))
    return 0


def _cmd_evaluate(args) -> int:
    from .pipeline import evaluate
    from .volume import DatasetManifest

    manifest = DatasetManifest.load(args.manifest)
    report = evaluate(manifest, args.predictions, case_ids=args.cases or None)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(json.dumps(report["aggregate"]))
    return 0


def _cmd_report(args) -> int:
    from .pipeline import percentile_report
    from .volume import DatasetManifest

    manifest = DatasetManifest.load(args.manifest)
    try:
        report = json.loads(Path(args.evaluation).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{args.evaluation}: {exc}") from exc
    written = percentile_report(report, manifest, args.predictions, args.out)
    print(json.dumps({"images": [str(p) for p in written]}))
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import gradient_suite

    results = gradient_suite(seed=args.seed)
    worst = max(results.values())
    print(json.dumps({"checks": results, "max_rel_error": worst,
                      "tol": args.tol}))
    if worst > args.tol:
        raise NumericFailure(
            f"gradient audit failed: max relative error {worst:.3e} > {args.tol:g}")
    return 0


_COMMANDS = {
    "phantom": _cmd_phantom,
    "train-binary": _cmd_train_binary,
    "train-multiclass": _cmd_train_multiclass,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "gradcheck": _cmd_gradcheck,
}


def _fail(exc: Exception, code: int) -> int:
    print(f"gliomaseg: {type(exc).__name__}: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(exc, 2)
    except (NumericFailure, NonScalarLoss, FloatingPointError) as exc:
        return _fail(exc, 4)
    except GliomasegError as exc:
        return _fail(exc, 3)
    except OSError as exc:
        return _fail(exc, 3)


if __name__ == "__main__":
    sys.exit(main())
