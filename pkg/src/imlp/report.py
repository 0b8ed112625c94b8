"""Run reports, score tables and Pareto figures.

Reports are canonical JSON (sorted keys, fixed indentation) with a sha256
content hash over everything except the ``hash`` field, so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .data import canonical_json, content_hash
from .errors import SchemaError
from .metrics import SegmentResult, netscore, netscore_t
from .stats import TradeoffPoint, pareto_front

REPORT_FORMAT = "imlp-run-report"
AGGREGATE_FORMAT = "imlp-aggregate-report"
REPORT_VERSION = 1
METRICS = ("balanced_accuracy", "log_loss", "energy_j", "wall_time_s", "netscore")


class ReportParseError(SchemaError):
    pass


def _mean_std(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std())}


def segment_aggregates(results: Sequence[SegmentResult]) -> dict:
    agg = {m: _mean_std([getattr(r, m) for r in results]) for m in METRICS}
    agg["netscore_t"] = netscore_t(results)
    agg["total_energy_j"] = math.fsum(r.energy_j for r in results)
    agg["total_time_s"] = math.fsum(r.wall_time_s for r in results)
    agg["n_segments"] = len(results)
    return agg


def build_run_report(config_echo: dict, results: Sequence[SegmentResult], seed: int) -> dict:
    report = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "config": config_echo,
        "segments": [r.to_dict() for r in results],
        "aggregates": segment_aggregates(results),
        "environment": {"package": "imlp", "version": __version__, "seed": seed},
    }
    report["hash"] = content_hash(report)
    return report


def build_aggregate_report(config_echo: dict, reports: Sequence[dict], names: Sequence[str]) -> dict:
    keys = ("balanced_accuracy", "log_loss", "energy_j", "wall_time_s")
    per_seed = {k: [r["aggregates"][k]["mean"] for r in reports] for k in keys}
    per_seed["netscore_t"] = [r["aggregates"]["netscore_t"] for r in reports]
    per_seed["total_energy_j"] = [r["aggregates"]["total_energy_j"] for r in reports]
    per_seed["total_time_s"] = [r["aggregates"]["total_time_s"] for r in reports]
    agg = {
        "format": AGGREGATE_FORMAT,
        "version": REPORT_VERSION,
        "config": config_echo,
        "seeds": [r["environment"]["seed"] for r in reports],
        "reports": [{"file": n, "hash": r["hash"]} for n, r in zip(names, reports)],
        "aggregates": {k: _mean_std(v) for k, v in per_seed.items()},
        "environment": {"package": "imlp", "version": __version__},
    }
    agg["hash"] = content_hash(agg)
    return agg


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj))


def read_run_report(path) -> dict:
    try:
        with open(path) as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportParseError(f"{path}: cannot read report ({exc})") from None
    if report.get("format") != REPORT_FORMAT or not isinstance(report.get("segments"), list):
        raise ReportParseError(f"{path}: not a run report")
    if not report["segments"]:
        raise ReportParseError(f"{path}: report has no segments")
    try:
        report["_results"] = [SegmentResult.from_dict(s) for s in report["segments"]]
    except TypeError as exc:
        raise ReportParseError(f"{path}: malformed segment record ({exc})") from None
    return report


def report_label(report: dict, path) -> str:
    cfg = report.get("config", {})
    kind = cfg.get("model", {}).get("kind", "?")
    mode = cfg.get("train", {}).get("mode", "?")
    seed = report.get("environment", {}).get("seed", "?")
    return f"{Path(path).stem}:{kind}/{mode}/seed{seed}"


def score_row(report: dict, path) -> dict:
    """Recompute the score columns from a report's per-segment records."""
    results = report["_results"]
    scores = []
    for r in results:
        ns = netscore(r.balanced_accuracy, r.energy_j)
        if abs(ns - r.netscore) > 1e-12:
            raise ReportParseError(f"{path}: segment {r.segment} stores NS {r.netscore} but P/E give {ns}")
        scores.append(ns)
    return {
        "run": report_label(report, path),
        "energy_j": math.fsum(r.energy_j for r in results),
        "time_s": math.fsum(r.wall_time_s for r in results),
        "balanced_accuracy": float(np.mean([r.balanced_accuracy for r in results])),
        "log_loss": float(np.mean([r.log_loss for r in results])),
        "netscore_t": netscore_t(scores),
    }


def score_table(paths: Sequence) -> list[dict]:
    rows = [score_row(read_run_report(p), p) for p in paths]
    return sorted(rows, key=lambda r: -r["netscore_t"])


SCORE_COLUMNS = (
    ("run", "Run"),
    ("energy_j", "Energy J (down)"),
    ("time_s", "Time s (down)"),
    ("balanced_accuracy", "Bal.Acc (up)"),
    ("log_loss", "LogLoss (down)"),
    ("netscore_t", "NetScore-T (up)"),
)


def format_table(rows: Sequence[dict], columns=SCORE_COLUMNS) -> str:
    def fmt(v):
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    cells = [[title for _, title in columns]] + [[fmt(r[k]) for k, _ in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_csv(path, rows: Sequence[dict], keys: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])


# -- Pareto inputs/outputs --------------------------------------------------------


def points_from_reports(paths: Sequence) -> list[TradeoffPoint]:
    points = []
    for p in paths:
        row = score_row(read_run_report(p), p)
        points.append(TradeoffPoint(row["balanced_accuracy"], row["energy_j"], row["run"]))
    return points


def read_points_csv(path) -> list[TradeoffPoint]:
    """Points file with header ``label,p,E``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"label", "p", "E"} <= set(reader.fieldnames):
            raise ReportParseError(f"{path}: points file needs columns label,p,E")
        out = []
        for i, row in enumerate(reader, start=1):
            try:
                out.append(TradeoffPoint(float(row["p"]), float(row["E"]), row["label"]))
            except (TypeError, ValueError):
                raise ReportParseError(f"{path}: bad point on data row {i}") from None
    return out


def pareto_svg(points: Sequence[TradeoffPoint], front: Sequence[TradeoffPoint], width: int = 640, height: int = 480) -> str:
    """Scatter of every point plus the front as a polyline (energy on x)."""
    margin = 60
    es = [pt.E for pt in points]
    ps = [pt.p for pt in points]
    e_lo, e_hi = min(es), max(es)
    p_lo, p_hi = min(ps), max(ps)
    e_span = (e_hi - e_lo) or 1.0
    p_span = (p_hi - p_lo) or 1.0

    def sx(e):
        return margin + (e - e_lo) / e_span * (width - 2 * margin)

    def sy(p):
        return height - margin - (p - p_lo) / p_span * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="14">Energy (J)</text>',
        f'<text x="18" y="{height / 2:.1f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {height / 2:.1f})">Balanced accuracy</text>',
        f'<text x="{margin}" y="{height - margin + 18}" font-size="11">{e_lo:.4g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 18}" text-anchor="end" font-size="11">{e_hi:.4g}</text>',
        f'<text x="{margin - 6}" y="{height - margin}" text-anchor="end" font-size="11">{p_lo:.4g}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" text-anchor="end" font-size="11">{p_hi:.4g}</text>',
    ]
    if front:
        # duplicates on the front share (E, p); one vertex each keeps x strictly increasing
        vertices = dict.fromkeys((pt.E, pt.p) for pt in front)
        coords = " ".join(f"{sx(e):.2f},{sy(p):.2f}" for e, p in vertices)
        parts.append(f'<polyline class="front" points="{coords}" fill="none" stroke="crimson" stroke-width="2"/>')
    for pt in points:
        parts.append(
            f'<circle class="point" cx="{sx(pt.E):.2f}" cy="{sy(pt.p):.2f}" r="4" fill="steelblue">'
            f"<title>{escape(pt.label)}</title></circle>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def pareto_outputs(points: Sequence[TradeoffPoint]) -> tuple[list[TradeoffPoint], str]:
    front = pareto_front(points)
    return front, pareto_svg(points, front)
