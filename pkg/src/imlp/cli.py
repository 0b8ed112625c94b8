"""Command-line entry point: ``imlp {prep,run,score,pareto,stats}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (divergence), 5 statistics precondition failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .data import build_manifest, canonical_json, preprocessing_summary
from .errors import (
    ConfigError,
    DivergenceError,
    ImlpError,
    SegmentError,
    StatsPreconditionError,
)
from .harness import RunConfig, execute_run
from .report import format_table, pareto_outputs, points_from_reports, read_points_csv, score_table, write_csv
from .stats import ResultsMatrix, compare_algorithms

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_STATS = 0, 2, 3, 4, 5

logger = logging.getLogger("imlp")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, SegmentError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DivergenceError):
        return EXIT_NUMERIC
    if isinstance(exc, StatsPreconditionError):
        return EXIT_STATS
    return EXIT_DATA


def cmd_prep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(
        args.table,
        args.schema,
        split_seed=args.seed,
        train_fraction=args.train_fraction,
        min_size=args.min_size,
        max_size=args.max_size,
    )
    (out / "manifest.json").write_text(canonical_json(manifest))
    summary = preprocessing_summary(manifest)
    (out / "summary.txt").write_text(summary)
    print(summary, end="")
    return EXIT_OK


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(" ", "").split(",") if s]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None


def cmd_run(args) -> int:
    if args.config:
        cfg = RunConfig.load(args.config)
    elif args.manifest:
        cfg = RunConfig(manifest=args.manifest)
    else:
        raise ConfigError("run needs --config or --manifest")
    overrides = {}
    if args.manifest:
        overrides["manifest"] = args.manifest
    if args.seed:
        overrides["seeds"] = _parse_seeds(args.seed)
    if args.out:
        overrides["output_dir"] = args.out
    if args.energy:
        overrides["energy"] = args.energy
    if args.model:
        overrides["model"] = args.model
    if args.workers:
        overrides["workers"] = args.workers
    if args.mode:
        overrides["train"] = {**cfg.train, "mode": {"cumulative": "cumulative-retrain"}.get(args.mode, args.mode)}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    outcome = execute_run(cfg)
    agg = outcome["aggregate"]["aggregates"]
    print(f"wrote {len(outcome['reports'])} report(s) and aggregate.json to {cfg.output_dir}")
    print(
        f"NetScore-T {agg['netscore_t']['mean']:.6g} +/- {agg['netscore_t']['std']:.3g}, "
        f"balanced accuracy {agg['balanced_accuracy']['mean']:.4f} +/- {agg['balanced_accuracy']['std']:.3g}"
    )
    return EXIT_OK


def cmd_score(args) -> int:
    rows = score_table(args.reports)
    print(format_table(rows), end="")
    if args.out:
        write_csv(args.out, rows, ["run", "energy_j", "time_s", "balanced_accuracy", "log_loss", "netscore_t"])
    return EXIT_OK


def cmd_pareto(args) -> int:
    points = []
    if args.points:
        points.extend(read_points_csv(args.points))
    if args.reports:
        points.extend(points_from_reports(args.reports))
    if not points:
        raise ConfigError("pareto needs report files or --points")
    front, svg = pareto_outputs(points)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"label": pt.label, "p": pt.p, "E": pt.E} for pt in front]
    write_csv(out / "pareto_front.csv", rows, ["label", "p", "E"])
    (out / "pareto.svg").write_text(svg)
    print(format_table(rows, (("label", "Label"), ("p", "Performance"), ("E", "Energy J"))), end="")
    return EXIT_OK


def cmd_stats(args) -> int:
    matrix = ResultsMatrix.read_csv(args.matrix)
    report = compare_algorithms(
        matrix,
        alpha=args.alpha,
        higher_is_better=not args.lower_is_better,
        control=args.control,
        cd_alpha=args.cd_alpha,
    )
    text = canonical_json(report.to_dict())
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imlp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="emit per-segment progress records")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="segment, split and fit preprocessing for a table")
    p.add_argument("table")
    p.add_argument("schema")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--train-fraction", type=float, default=0.85)
    p.add_argument("--min-size", type=int, default=500)
    p.add_argument("--max-size", type=int, default=1000)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("run", help="train over the stream for each seed")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--seed", help="comma-separated seed list")
    p.add_argument("--out")
    p.add_argument("--energy", help="flops | constant:<watts> | trace:<path>")
    p.add_argument("--mode", choices=["incremental", "cumulative", "cumulative-retrain"])
    p.add_argument("--model", choices=["imlp", "plain-mlp"])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="comparison table from run reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", help="optional CSV output")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pareto", help="Pareto front table and scatter figure")
    p.add_argument("reports", nargs="*")
    p.add_argument("--points", help="CSV with columns label,p,E")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("stats", help="Friedman test with gated post-hoc analysis")
    p.add_argument("matrix")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--cd-alpha", type=float, default=0.05, choices=[0.05, 0.10])
    p.add_argument("--control")
    p.add_argument("--lower-is-better", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ImlpError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"imlp {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
