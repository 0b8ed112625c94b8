"""Table ingestion, preprocessing, chronological segmentation and splits.

Input is a delimiter-separated table with a header row plus a JSON schema
sidecar::

    {
      "version": 1,
      "target": "label",
      "labels": ["no", "yes"],                 # optional, fixes the class set
      "delimiter": ",",                        # optional
      "columns": [
        {"name": "age", "kind": "numeric"},
        {"name": "city", "kind": "categorical", "categories": ["a", "b"]}
      ]
    }

Row order is temporal order and is never changed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateSplitError, EmptySegmentError, LabelError, SchemaError
from .trainer import StreamSegment

MISSING_TOKENS = frozenset({"", "?", "na", "nan", "null", "none"})
MISSING_CATEGORY = "<missing>"
MANIFEST_FORMAT = "imlp-manifest"
MANIFEST_VERSION = 1


def is_missing(value) -> bool:
    return value is None or str(value).strip().lower() in MISSING_TOKENS


# -- schema / table -----------------------------------------------------------


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Schema:
    target: str
    columns: tuple[ColumnSpec, ...]
    labels: tuple[str, ...] | None = None
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        if "target" not in d or "columns" not in d:
            raise SchemaError("schema needs 'target' and 'columns'")
        cols = []
        for c in d["columns"]:
            kind = c.get("kind")
            if kind not in ("numeric", "categorical"):
                raise SchemaError(f"column kind must be numeric or categorical, got {kind!r}", column=c.get("name"))
            cats = c.get("categories")
            cols.append(ColumnSpec(c["name"], kind, None if cats is None else tuple(str(x) for x in cats)))
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if d["target"] in names:
            raise SchemaError("target must not also be a feature column", column=d["target"])
        labels = d.get("labels")
        return cls(
            target=d["target"],
            columns=tuple(cols),
            labels=None if labels is None else tuple(str(x) for x in labels),
            delimiter=d.get("delimiter", ","),
        )

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: invalid JSON ({exc})") from None


@dataclass
class RawTable:
    schema: Schema
    columns: dict[str, list[str]]
    target: list[str]

    @property
    def n_rows(self) -> int:
        return len(self.target)

    @classmethod
    def from_rows(cls, schema: Schema, header: Sequence[str], rows: Sequence[Sequence[str]]) -> "RawTable":
        header = [h.strip() for h in header]
        if schema.target not in header:
            raise SchemaError(f"target column {schema.target!r} not found in table header", column=schema.target)
        known = {c.name for c in schema.columns} | {schema.target}
        for h in header:
            if h not in known:
                raise SchemaError("table column not declared in schema", column=h)
        for c in schema.columns:
            if c.name not in header:
                raise SchemaError("schema column missing from table", column=c.name)
        pos = {h: i for i, h in enumerate(header)}
        cols = {c.name: [] for c in schema.columns}
        target = []
        for r, row in enumerate(rows, start=1):
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(row)}", row=r)
            for c in schema.columns:
                v = row[pos[c.name]].strip()
                if c.kind == "numeric" and not is_missing(v):
                    try:
                        float(v)
                    except ValueError:
                        raise SchemaError(f"non-numeric value {v!r}", row=r, column=c.name) from None
                cols[c.name].append(v)
            y = row[pos[schema.target]].strip()
            if is_missing(y):
                raise SchemaError("missing target value", row=r, column=schema.target)
            target.append(y)
        return cls(schema, cols, target)

    @classmethod
    def read(cls, table_path, schema: Schema) -> "RawTable":
        with open(table_path, newline="") as fh:
            reader = csv.reader(fh, delimiter=schema.delimiter)
            header = next(reader, None)
            if header is None:
                raise SchemaError(f"{table_path}: empty table")
            rows = [r for r in reader if r]
        return cls.from_rows(schema, header, rows)

    def label_map(self) -> list[str]:
        """Class labels in index order: the declared set, else first appearance."""
        if self.schema.labels is not None:
            return list(self.schema.labels)
        return list(dict.fromkeys(self.target))


# -- segmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class SegmentPlan:
    n: int
    base_size: int
    remainder: int
    bounds: tuple[tuple[int, int], ...]

    @property
    def sizes(self) -> list[int]:
        return [e - s for s, e in self.bounds]

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n,
            "base_size": self.base_size,
            "remainder": self.remainder,
            "bounds": [list(b) for b in self.bounds],
        }


def plan_segments(n: int, min_size: int = 500, max_size: int = 1000) -> SegmentPlan:
    """Split ``n`` ordered rows into contiguous near-uniform segments.

    The base size ``s`` in ``[min_size, max_size]`` minimizes ``n mod s``
    (smallest ``s`` on ties); the remainder goes one row each to the first
    segments.
    """
    if n < 1:
        raise EmptySegmentError("cannot segment an empty table")
    if not 1 <= min_size <= max_size:
        raise ValueError("need 1 <= min_size <= max_size")
    if n <= max_size:
        return SegmentPlan(n, n, 0, ((0, n),))
    s = min(range(min_size, max_size + 1), key=lambda size: (n % size, size))
    k, r = divmod(n, s)
    # r <= k for every n > max_size with the default bounds; the
    # round-robin form keeps sizes within 1 of each other regardless.
    extra, rest = divmod(r, k)
    bounds, start = [], 0
    for i in range(k):
        size = s + extra + (1 if i < rest else 0)
        bounds.append((start, start + size))
        start += size
    return SegmentPlan(n, s, r, tuple(bounds))


# -- stratified split -----------------------------------------------------------


def stratified_split(labels, train_fraction: float = 0.85, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-class proportional train/test split of one segment.

    Returns sorted local row indices ``(train, test)``. The test size is
    ``round(n * (1 - train_fraction))`` clamped to ``[1, n - 1]`` and shared
    between classes by largest remainder (ties to the earlier class); a class
    with two or more rows then keeps at least one row on each side.
    """
    y = np.asarray(labels)
    n = len(y)
    if n < 2:
        raise DegenerateSplitError(f"cannot split a segment of {n} row(s)")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    test_frac = 1.0 - train_fraction
    classes, first_seen = np.unique(y, return_index=True)
    classes = classes[np.argsort(first_seen)]
    counts = np.array([np.sum(y == c) for c in classes])

    n_test = min(max(int(math.floor(n * test_frac + 0.5)), 1), n - 1)
    quota = counts * test_frac
    alloc = np.floor(quota).astype(int)
    short = n_test - alloc.sum()
    if short > 0:
        order = sorted(range(len(classes)), key=lambda i: (-(quota[i] - alloc[i]), i))
        for i in order[:short]:
            alloc[i] += 1
    for i, c in enumerate(counts):
        if c >= 2:
            alloc[i] = min(max(alloc[i], 1), c - 1)

    rng = np.random.default_rng(seed)
    train, test = [], []
    for c, k in zip(classes, alloc):
        members = np.flatnonzero(y == c)
        members = members[rng.permutation(len(members))]
        test.extend(members[:k])
        train.extend(members[k:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


# -- preprocessing ----------------------------------------------------------------


@dataclass
class PreprocessModel:
    """Frozen statistics: numeric median/mean/std, categorical category lists."""

    columns: list[dict]
    labels: list[str]
    fitted_on_segment: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def width(self) -> int:
        return sum(1 if c["kind"] == "numeric" else len(c["categories"]) for c in self.columns)

    def feature_names(self) -> list[str]:
        names = []
        for c in self.columns:
            if c["kind"] == "numeric":
                names.append(c["name"])
            else:
                names.extend(f"{c['name']}={v}" for v in c["categories"])
        return names

    def to_dict(self) -> dict:
        return {
            "columns": self.columns,
            "labels": self.labels,
            "fitted_on_segment": self.fitted_on_segment,
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessModel":
        return cls(d["columns"], d["labels"], d.get("fitted_on_segment", 0), d.get("warnings", []))


def fit_preprocessor(table: RawTable, rows: Sequence[int], segment: int = 0) -> PreprocessModel:
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise EmptySegmentError("cannot fit preprocessing on zero rows")
    cols, warnings = [], []
    for spec in table.schema.columns:
        values = [table.columns[spec.name][i] for i in rows]
        if spec.kind == "numeric":
            present = np.array([float(v) for v in values if not is_missing(v)])
            if present.size == 0:
                median = 0.0
                warnings.append(f"numeric column {spec.name!r} is entirely missing; imputing 0")
            else:
                median = float(np.median(present))
            imputed = np.array([median if is_missing(v) else float(v) for v in values])
            mean = float(imputed.mean())
            std = float(imputed.std())
            if std <= 1e-12 * max(1.0, abs(mean)):
                std = 1.0  # zero-variance guard: centred values stay 0
            cols.append({"name": spec.name, "kind": "numeric", "median": median, "mean": mean, "std": std})
        else:
            if spec.categories is not None:
                cats = list(spec.categories)
            else:
                cats = list(dict.fromkeys(v for v in values if not is_missing(v)))
            cols.append({"name": spec.name, "kind": "categorical", "categories": cats + [MISSING_CATEGORY]})
    return PreprocessModel(cols, table.label_map(), segment, warnings)


def transform(model: PreprocessModel, table: RawTable, rows: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Encode ``rows`` of ``table`` into a feature matrix and class indices."""
    rows = np.asarray(rows, dtype=np.int64)
    blocks = []
    for col in model.columns:
        if col["name"] not in table.columns:
            raise SchemaError("column missing from table", column=col["name"])
        raw = [table.columns[col["name"]][i] for i in rows]
        if col["kind"] == "numeric":
            vals = np.array([col["median"] if is_missing(v) else float(v) for v in raw])
            blocks.append(((vals - col["mean"]) / col["std"])[:, None])
        else:
            cats = col["categories"]
            index = {c: j for j, c in enumerate(cats)}
            block = np.zeros((len(rows), len(cats)))
            for r, v in enumerate(raw):
                j = index.get(MISSING_CATEGORY if is_missing(v) else v)
                if j is not None:
                    block[r, j] = 1.0
            blocks.append(block)
    X = np.concatenate(blocks, axis=1) if blocks else np.zeros((len(rows), 0))
    label_index = {lab: i for i, lab in enumerate(model.labels)}
    y = np.empty(len(rows), dtype=np.int64)
    for r, i in enumerate(rows):
        lab = table.target[i]
        if lab not in label_index:
            raise LabelError(f"label {lab!r} at row {i + 1} is not in the fixed label set {model.labels}")
        y[r] = label_index[lab]
    return X, y


# -- manifest -------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=True) + "\n"


def content_hash(obj: dict, skip: str = "hash") -> str:
    body = {k: v for k, v in obj.items() if k != skip}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_manifest(
    table_path,
    schema_path,
    split_seed: int = 0,
    train_fraction: float = 0.85,
    min_size: int = 500,
    max_size: int = 1000,
) -> dict:
    schema = Schema.load(schema_path)
    table = RawTable.read(table_path, schema)
    plan = plan_segments(table.n_rows, min_size, max_size)
    labels = table.label_map()
    segments = []
    for k, (start, end) in enumerate(plan.bounds):
        tr, te = stratified_split(table.target[start:end], train_fraction, seed=[split_seed, k])
        segments.append({"index": k, "start": start, "end": end, "train": (tr + start).tolist(), "test": (te + start).tolist()})
    pre = fit_preprocessor(table, segments[0]["train"], segment=0)
    unknown = sorted(set(table.target) - set(labels))
    if unknown:
        raise LabelError(f"labels {unknown} are not in the declared label set {labels}")
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "source": {
            "table": str(Path(table_path).resolve()),
            "table_sha256": file_sha256(table_path),
            "schema": str(Path(schema_path).resolve()),
            "schema_sha256": file_sha256(schema_path),
        },
        "plan": plan.to_dict(),
        "split": {"train_fraction": train_fraction, "seed": split_seed, "scope": "per-segment"},
        "segments": segments,
        "preprocessor": pre.to_dict(),
        "d_in": pre.width,
        "n_classes": len(labels),
    }
    manifest["hash"] = content_hash(manifest)
    return manifest


def load_manifest(path) -> dict:
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise SchemaError(f"{path}: not a dataset manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise SchemaError(f"{path}: unsupported manifest version {manifest.get('version')}")
    if manifest.get("hash") != content_hash(manifest):
        raise SchemaError(f"{path}: manifest hash mismatch")
    return manifest


def stream_from_manifest(manifest: dict) -> list[StreamSegment]:
    src = manifest["source"]
    if file_sha256(src["table"]) != src["table_sha256"]:
        raise SchemaError(f"{src['table']}: table changed since the manifest was written")
    schema = Schema.load(src["schema"])
    table = RawTable.read(src["table"], schema)
    pre = PreprocessModel.from_dict(manifest["preprocessor"])
    stream = []
    for seg in manifest["segments"]:
        x_tr, y_tr = transform(pre, table, seg["train"])
        x_te, y_te = transform(pre, table, seg["test"])
        stream.append(StreamSegment(seg["index"], x_tr, y_tr, x_te, y_te))
    return stream


def preprocessing_summary(manifest: dict) -> str:
    pre = manifest["preprocessor"]
    lines = [
        f"rows: {manifest['plan']['n_rows']}",
        f"segments: {len(manifest['segments'])} (base size {manifest['plan']['base_size']}, "
        f"remainder {manifest['plan']['remainder']})",
        f"segment sizes: {[s['end'] - s['start'] for s in manifest['segments']]}",
        f"features after encoding: {manifest['d_in']}",
        f"classes: {pre['labels']}",
        f"preprocessor fitted on segment {pre['fitted_on_segment']} training split",
    ]
    for c in pre["columns"]:
        if c["kind"] == "numeric":
            lines.append(f"  {c['name']}: numeric median={c['median']:.6g} mean={c['mean']:.6g} std={c['std']:.6g}")
        else:
            lines.append(f"  {c['name']}: categorical {len(c['categories'])} levels")
    lines.extend(f"warning: {w}" for w in pre["warnings"])
    lines.append(f"manifest hash: {manifest['hash']}")
    return "\n".join(lines) + "\n"
