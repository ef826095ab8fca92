"""Command-line front end.

Subcommands mirror the pipeline stages plus two drivers:

    pipeline   run every stage over all seeds and aggregate
    ablate     train the loss-variant grid and compare to the full recipe
    split      stage: carve test/calibration slices and folds for one seed
    teach      stage: produce audited out-of-fold soft labels
    distill    stage: build targets and train the student
    evaluate   stage: score the stored student (refuses unaudited labels)
    bench      stage: single-thread latency of the stored student

Exit codes: 0 success, 2 configuration or validation error, 3 leakage-audit
failure.
"""

from __future__ import annotations

import argparse
import sys

from .bench import format_table
from .dataset import DatasetError
from .pipeline import (
    ConfigError,
    MissingArtifactError,
    RunConfig,
    StudentArtifact,
    format_ablation_table,
    run_ablation,
    run_bench,
    run_distill,
    run_evaluate,
    run_pipeline,
    run_split,
    run_teach,
    seed_dir,
)
from .teacher import LeakageError


def _kv_pairs(text: str) -> dict:
    """Parse "a=1,b=2.5,c=zap" into {'a': 1, 'b': 2.5, 'c': 'zap'}."""
    out: dict = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"expected key=value, got {part!r}")
        key, raw = part.split("=", 1)
        try:
            val: object = int(raw)
        except ValueError:
            try:
                val = float(raw)
            except ValueError:
                val = raw
        out[key.strip()] = val
    return out


def parse_teacher(text: str) -> dict:
    """Teacher flag grammar: knn | knn:k=7 | bagged | bagged:trees=30,depth=8
    | file:PATH."""
    if text.startswith("file:"):
        path = text[len("file:"):]
        if not path:
            raise ConfigError("file teacher needs a path: file:PATH")
        return {"kind": "file", "params": {"path": path}}
    kind, _, rest = text.partition(":")
    kind = {"knn": "knn", "bagged": "bagged_tree", "bagged_tree": "bagged_tree"}.get(kind)
    if kind is None:
        raise ConfigError(f"unknown teacher {text!r}; use knn, bagged, or file:PATH")
    return {"kind": kind, "params": _kv_pairs(rest) if rest else {}}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--csv", help="dataset CSV (overrides the config)")
    p.add_argument("--schema", help="dataset schema JSON, required with --csv")
    p.add_argument("--synth", metavar="K=V,...",
                   help="synthetic data, e.g. n=1000,d=20,label_noise=0.1")
    p.add_argument("--max-rows", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--k-folds", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--t-min", type=float)
    p.add_argument("--t-max", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--student", choices=["gbdt", "mlp", "logreg"])
    p.add_argument("--teacher", action="append", metavar="SPEC",
                   help="knn | bagged[:k=v,...] | file:PATH (repeatable)")
    p.add_argument("--seeds", help="comma-separated run seeds, e.g. 0,1,2,3,4")
    p.add_argument("--out", help="artifact directory")


def build_config(args: argparse.Namespace) -> RunConfig:
    obj: dict = {}
    if args.config:
        import json
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from exc
    if args.csv is not None:
        obj["dataset_csv"] = args.csv
        obj.pop("synth", None)
    if args.schema is not None:
        obj["dataset_schema"] = args.schema
    if args.synth is not None:
        obj["synth"] = _kv_pairs(args.synth)
        obj.pop("dataset_csv", None)
        obj.pop("dataset_schema", None)
    if args.max_rows is not None:
        obj["max_rows"] = args.max_rows
    if args.test_fraction is not None:
        obj["test_fraction"] = args.test_fraction
    if args.k_folds is not None:
        obj["k_folds"] = args.k_folds
    for name in ("alpha", "t_min", "t_max", "mu", "sigma"):
        val = getattr(args, name)
        if val is not None:
            obj.setdefault("loss", {})[name] = val
    if args.student is not None:
        obj["student"] = args.student
    if args.teacher:
        obj["teachers"] = [parse_teacher(t) for t in args.teacher]
    if args.seeds is not None:
        try:
            obj["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --seeds value {args.seeds!r}") from exc
    if args.out is not None:
        obj["out"] = args.out
    cfg = RunConfig.from_dict(obj)
    cfg.validate()
    return cfg


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distillforge",
        description="distill black-box probabilistic models into fast tabular students",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="run all stages over all seeds")
    _add_common(p)
    p.add_argument("--with-bench", action="store_true",
                   help="also benchmark each seed (latency numbers are not "
                        "reproducible, so this is off by default)")

    p = sub.add_parser("ablate", help="loss-variant grid with paired comparison")
    _add_common(p)

    for name, help_text in (
        ("split", "carve test/calibration slices and folds"),
        ("teach", "produce audited out-of-fold soft labels"),
        ("distill", "build targets and train the student"),
        ("evaluate", "score the stored student on the test rows"),
        ("bench", "single-thread latency of the stored student"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.add_argument("--seed", type=int, default=0, help="which run seed (default 0)")
        if name == "evaluate":
            p.add_argument("--allow-unaudited", action="store_true",
                           help="evaluate even when the soft labels cannot be audited")
    return parser


def _print_aggregate(agg: dict) -> None:
    mean, std = agg["mean"], agg["std"]
    print(f"seeds ok: {len(agg['seeds'])}  failed: {len(agg['errors'])}")
    for key, err in sorted(agg["errors"].items()):
        print(f"  seed {key} failed: {err}")
    print(f"test AUC      {mean['auc']:.4f} +/- {std['auc']:.4f}")
    if "retention_pct" in mean:
        print(f"retention     {mean['retention_pct']:.2f}% of teacher AUC "
              f"({mean['teacher_auc']:.4f})")
    print(f"ECE           {mean['ece']:.4f} -> {mean['ece_ts']:.4f} after temperature scaling")
    print(f"Brier         {mean['brier']:.4f} -> {mean['brier_ts']:.4f}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        if args.command == "pipeline":
            agg = run_pipeline(cfg, with_bench=args.with_bench)
            _print_aggregate(agg)
            print(f"artifacts in {cfg.out}")
        elif args.command == "ablate":
            result = run_ablation(cfg)
            print(format_ablation_table(result))
            print(f"artifacts in {cfg.out}")
        elif args.command == "split":
            split = run_split(cfg, args.seed)
            print(f"seed {args.seed}: {len(split['train_rows'])} train, "
                  f"{len(split['calib_rows'])} calibration, "
                  f"{len(split['test_rows'])} test rows "
                  f"-> {seed_dir(cfg.out, args.seed)}")
        elif args.command == "teach":
            soft = run_teach(cfg, args.seed)
            print(f"seed {args.seed}: labeled {soft.n_rows} rows with "
                  f"{soft.teacher_id}; audit passed")
        elif args.command == "distill":
            artifact = run_distill(cfg, args.seed)
            print(f"seed {args.seed}: trained {artifact.kind} student "
                  f"-> {seed_dir(cfg.out, args.seed) / 'model.json'}")
        elif args.command == "evaluate":
            report = run_evaluate(cfg, args.seed,
                                  allow_unaudited=args.allow_unaudited)
            line = (f"seed {args.seed}: AUC {report.auc:.4f}  "
                    f"ECE {report.ece:.4f} -> {report.ece_ts:.4f} (T* {report.fitted_temperature:.3f})")
            if report.retention_pct is not None:
                line += f"  retention {report.retention_pct:.2f}%"
            print(line)
        elif args.command == "bench":
            rep = run_bench(cfg, args.seed)
            # label with what is actually stored, not the --student default
            stored = StudentArtifact.load(seed_dir(cfg.out, args.seed) / "model.json")
            print(format_table([(stored.kind, rep)]))
        return 0
    except LeakageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DatasetError, MissingArtifactError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
