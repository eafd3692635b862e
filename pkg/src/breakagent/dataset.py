"""Fragment records, labelled feature tables, and CSV ingestion/cleaning."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .breaks import STAT_NAMES, BreakRecord, ContractError, SummaryStats, parse_bool, summary_stats

BREAK_COLUMNS = (
    "num_angles",
    *(f"angle_{s}" for s in STAT_NAMES),
    "interior_edge_is_break",
    "interrupted",
    "ridge_notch",
    "interior_notch",
    "chord_length",
    "arc_length",
    "arc_angle",
)

FRAGMENT_COLUMNS = (
    "num_breaks",
    "trabecula",
    "volume",
    "surface_area",
    "bbox_length",
    "bbox_width",
    "bbox_depth",
    *(f"angle_{outer}_of_{inner}" for outer in STAT_NAMES for inner in STAT_NAMES),
    "count_interior_edge_break",
    "count_interior_edge_endosteal",
    "count_interrupted",
    "count_ridge_notch",
    "count_interior_notch",
    *(f"chord_{s}" for s in STAT_NAMES),
    *(f"arclen_{s}" for s in STAT_NAMES),
    *(f"arcangle_{s}" for s in STAT_NAMES),
)

LEVELS = ("break", "fragment")


@dataclass(frozen=True)
class FragmentMeta:
    fragment_id: str
    label: str
    trabecula: bool


@dataclass(frozen=True)
class FragmentRecord:
    fragment_id: str
    label: str
    num_breaks: int
    trabecula: int
    volume: float
    surface_area: float
    bbox: tuple
    angle_meta_stats: dict  # outer stat -> SummaryStats over per-break inner stats
    count_interior_edge_break: int
    count_interior_edge_endosteal: int
    count_interrupted: int
    count_ridge_notch: int
    count_interior_notch: int
    chord_stats: SummaryStats
    arclen_stats: SummaryStats
    arcangle_stats: SummaryStats

    def feature_vector(self) -> list:
        vec = [
            float(self.num_breaks),
            float(self.trabecula),
            self.volume,
            self.surface_area,
            *map(float, self.bbox),
        ]
        for outer in STAT_NAMES:
            vec.extend(self.angle_meta_stats[outer][inner] for inner in STAT_NAMES)
        vec += [
            float(self.count_interior_edge_break),
            float(self.count_interior_edge_endosteal),
            float(self.count_interrupted),
            float(self.count_ridge_notch),
            float(self.count_interior_notch),
            *self.chord_stats.as_tuple(),
            *self.arclen_stats.as_tuple(),
            *self.arcangle_stats.as_tuple(),
        ]
        return vec


def build_fragment_record(meta: FragmentMeta, mesh_feats, breaks) -> FragmentRecord:
    """Aggregate per-break records into the fragment-level schema.

    Angle features are statistics of the per-break angle statistics, so a
    break with many measurements weighs no more than a break with one.
    ``mesh_feats`` is ``(volume, surface_area, (length, width, depth))``.
    """
    breaks = list(breaks)
    if not breaks:
        raise ContractError(f"fragment {meta.fragment_id}: no breaks")
    for b in breaks:
        if b.fragment_id != meta.fragment_id:
            raise ContractError(f"break {b.fragment_id}/{b.break_id} does not belong to fragment {meta.fragment_id}")
    volume, area, bbox = mesh_feats
    # outer[s_out][s_in] = s_out over breaks of each break's s_in
    per_inner = {inner: summary_stats([b.angle_stats[inner] for b in breaks]) for inner in STAT_NAMES}
    angle_meta = {outer: {inner: per_inner[inner][outer] for inner in STAT_NAMES} for outer in STAT_NAMES}
    n_break_edge = sum(b.interior_edge_is_break for b in breaks)
    return FragmentRecord(
        fragment_id=meta.fragment_id,
        label=meta.label,
        num_breaks=len(breaks),
        trabecula=int(meta.trabecula),
        volume=float(volume),
        surface_area=float(area),
        bbox=tuple(float(v) for v in bbox),
        angle_meta_stats=angle_meta,
        count_interior_edge_break=n_break_edge,
        count_interior_edge_endosteal=len(breaks) - n_break_edge,
        count_interrupted=sum(b.interrupted for b in breaks),
        count_ridge_notch=sum(b.ridge_notch for b in breaks),
        count_interior_notch=sum(b.interior_notch for b in breaks),
        chord_stats=summary_stats([b.chord_length for b in breaks]),
        arclen_stats=summary_stats([b.arc_length for b in breaks]),
        arcangle_stats=summary_stats([b.arc_angle for b in breaks]),
    )


@dataclass
class FeatureTable:
    """Labelled feature matrix; ``group_ids`` name the fragment each row came from."""

    column_names: tuple
    rows: np.ndarray
    labels: np.ndarray
    group_ids: np.ndarray
    level: str
    row_ids: np.ndarray | None = None  # break ids for break tables
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.column_names = tuple(self.column_names)
        self.rows = np.asarray(self.rows, dtype=np.float64).reshape(-1, len(self.column_names))
        self.labels = np.asarray(self.labels).astype(str)
        self.group_ids = np.asarray(self.group_ids).astype(str)
        if self.level not in LEVELS:
            raise ContractError(f"level must be one of {LEVELS}, got {self.level!r}")
        n = len(self.rows)
        if len(self.labels) != n or len(self.group_ids) != n:
            raise ContractError("labels and group_ids must have one entry per row")
        if self.row_ids is not None:
            self.row_ids = np.asarray(self.row_ids).astype(str)
            if len(self.row_ids) != n:
                raise ContractError("row_ids must have one entry per row")
        if self.level == "fragment" and len(set(self.group_ids.tolist())) != n:
            raise ContractError("fragment-level tables need a unique group id per row")

    def __len__(self):
        return len(self.rows)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, mask_or_index, group_ids=None) -> "FeatureTable":
        """Rows selected by mask or index; ``group_ids`` optionally renames their groups."""
        idx = np.asarray(mask_or_index)
        return replace(
            self,
            rows=self.rows[idx],
            labels=self.labels[idx],
            group_ids=self.group_ids[idx] if group_ids is None else group_ids,
            row_ids=None if self.row_ids is None else self.row_ids[idx],
            meta=dict(self.meta),
        )

    def rows_in_groups(self, groups) -> np.ndarray:
        return np.isin(self.group_ids, np.asarray(sorted(groups), dtype=str))


def assemble_table(records) -> FeatureTable:
    records = list(records)
    if not records:
        raise ContractError("cannot assemble a table from zero records")
    if all(isinstance(r, BreakRecord) for r in records):
        raise ContractError("break records carry no label; use assemble_break_table(records, labels)")
    if not all(isinstance(r, FragmentRecord) for r in records):
        raise ContractError("records must all be fragment records")
    return FeatureTable(
        FRAGMENT_COLUMNS,
        np.array([r.feature_vector() for r in records]),
        [r.label for r in records],
        [r.fragment_id for r in records],
        "fragment",
    )


def assemble_break_table(records, labels: dict) -> FeatureTable:
    """Break-level table; each row inherits its fragment's label via ``labels``."""
    records = list(records)
    if not records:
        raise ContractError("cannot assemble a table from zero records")
    if not all(isinstance(r, BreakRecord) for r in records):
        raise ContractError("mixed record levels")
    try:
        row_labels = [labels[r.fragment_id] for r in records]
    except KeyError as exc:
        raise ContractError(f"no label for fragment {exc.args[0]}") from None
    return FeatureTable(
        BREAK_COLUMNS,
        np.array([r.feature_vector() for r in records]),
        row_labels,
        [r.fragment_id for r in records],
        "break",
        row_ids=[r.break_id for r in records],
    )


# ---------------------------------------------------------------------------
# Features CSV

def write_features_csv(table: FeatureTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        id_cols = ["fragment_id", "break_id"] if table.level == "break" else ["fragment_id"]
        w.writerow([*id_cols, "label", *table.column_names])
        for i in range(len(table)):
            ids = [table.group_ids[i]]
            if table.level == "break":
                ids.append("" if table.row_ids is None else table.row_ids[i])
            w.writerow([*ids, table.labels[i], *(repr(float(v)) for v in table.rows[i])])


def read_features_csv(path) -> FeatureTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        level = "break" if header[:2] == ["fragment_id", "break_id"] else "fragment"
        n_id = 2 if level == "break" else 1
        if header[:1] != ["fragment_id"] or header[n_id] != "label":
            raise ContractError(f"{path}: header must start with fragment_id[,break_id],label")
        groups, breaks, labels, rows = [], [], [], []
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ContractError(f"{path}:{line_no}: expected {len(header)} fields, got {len(rec)}")
            groups.append(rec[0])
            if level == "break":
                breaks.append(rec[1])
            labels.append(rec[n_id])
            try:
                rows.append([float(v) for v in rec[n_id + 1:]])
            except ValueError:
                raise ContractError(f"{path}:{line_no}: non-numeric feature value") from None
    columns = header[n_id + 1:]
    return FeatureTable(
        columns,
        np.array(rows, dtype=np.float64).reshape(-1, len(columns)),
        labels,
        groups,
        level,
        row_ids=breaks if level == "break" else None,
    )


def read_fragment_metadata(path) -> dict:
    """``fragment_id,label,trabecula`` CSV to {fragment_id: FragmentMeta}."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[:3]) != ["fragment_id", "label", "trabecula"]:
            raise ContractError(f"{path}: header must be fragment_id,label,trabecula")
        for line_no, row in enumerate(reader, start=2):
            fid = row["fragment_id"].strip()
            if fid in out:
                raise ContractError(f"{path}:{line_no}: duplicate fragment {fid}")
            label = row["label"].strip()
            if not label:
                raise ContractError(f"{path}:{line_no}: empty label")
            out[fid] = FragmentMeta(fid, label, parse_bool(row["trabecula"], f"{path}:{line_no} column trabecula"))
    return out


# ---------------------------------------------------------------------------
# External tabular data

COLUMN_KINDS = ("numeric", "boolean", "categorical", "label", "group", "drop")


class IngestionError(ValueError):
    pass


@dataclass
class ColumnDisposition:
    column: str
    action: str  # kept | one-hot | dropped-redundant | dropped-corrupted | kept-forced
    detail: str = ""


@dataclass
class CleaningReport:
    source: str
    dispositions: list = field(default_factory=list)
    rejected_rows: list = field(default_factory=list)  # (line number, reason)

    def to_text(self) -> str:
        lines = [f"cleaning report for {self.source}"]
        for d in self.dispositions:
            lines.append(f"{d.column}: {d.action}" + (f" ({d.detail})" if d.detail else ""))
        lines.append(f"rows rejected: {len(self.rejected_rows)}")
        for line_no, reason in self.rejected_rows:
            lines.append(f"  line {line_no}: {reason}")
        return "\n".join(lines) + "\n"


def ingest_tabular_csv(path, schema: dict) -> tuple[FeatureTable, CleaningReport]:
    """Clean an externally recorded CSV according to a declared schema.

    ``schema`` is ``{"columns": {name: kind}, "force_keep": [...],
    "true_tokens": [...], "false_tokens": [...], "level": "break"}`` with kinds from
    ``COLUMN_KINDS``. Boolean columns holding anything outside the
    true/false tokens are reported corrupted and dropped unless listed in
    ``force_keep``, in which case they are one-hot encoded as-is. Rows with
    an empty value in a used column are rejected, never imputed.
    """
    columns = schema.get("columns") or {}
    bad_kinds = {c: k for c, k in columns.items() if k not in COLUMN_KINDS}
    if bad_kinds:
        raise IngestionError(f"unknown column kinds: {bad_kinds}")
    labels_cols = [c for c, k in columns.items() if k == "label"]
    if len(labels_cols) != 1:
        raise IngestionError("schema must declare exactly one label column")
    group_cols = [c for c, k in columns.items() if k == "group"]
    if len(group_cols) > 1:
        raise IngestionError("schema may declare at most one group column")
    level = schema.get("level", "break")
    if level not in LEVELS:
        raise IngestionError(f"schema level must be one of {LEVELS}, got {level!r}")
    force_keep = set(schema.get("force_keep", ()))
    true_tokens = {t.lower() for t in schema.get("true_tokens", ("present", "true"))}
    false_tokens = {t.lower() for t in schema.get("false_tokens", ("absent", "false"))}

    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise IngestionError(f"{path}: declared columns missing from header: {missing}")
        raw = [(line_no, row) for line_no, row in enumerate(reader, start=2)]

    report = CleaningReport(str(path))
    used = [c for c, k in columns.items() if k != "drop"]
    kept_rows = []
    for line_no, row in raw:
        empty = [c for c in used if row[c] is None or not row[c].strip()]
        if empty:
            report.rejected_rows.append((line_no, f"missing value in {', '.join(empty)}"))
        else:
            kept_rows.append((line_no, row))
    if not kept_rows:
        raise IngestionError(f"{path}: no complete rows")

    feature_names, feature_cols = [], []
    for col, kind in columns.items():
        values = [row[col].strip() for _, row in kept_rows]
        if kind in ("label", "group"):
            continue
        if kind == "drop":
            report.dispositions.append(ColumnDisposition(col, "dropped-redundant"))
            continue
        if kind == "numeric":
            parsed = []
            for (line_no, _), v in zip(kept_rows, values):
                try:
                    parsed.append(float(v))
                except ValueError:
                    raise IngestionError(f"{path}:{line_no} column {col}: cannot parse {v!r} as a number") from None
            feature_names.append(col)
            feature_cols.append(parsed)
            report.dispositions.append(ColumnDisposition(col, "kept"))
            continue
        if kind == "boolean":
            lowered = [v.lower() for v in values]
            offending = Counter(v for v, lo in zip(values, lowered) if lo not in true_tokens | false_tokens)
            if not offending:
                feature_names.append(col)
                feature_cols.append([1.0 if lo in true_tokens else 0.0 for lo in lowered])
                report.dispositions.append(ColumnDisposition(col, "kept"))
                continue
            tokens = ", ".join(f"{t!r} x{n}" for t, n in sorted(offending.items()))
            if col not in force_keep:
                report.dispositions.append(ColumnDisposition(col, "dropped-corrupted", f"offending tokens: {tokens}"))
                continue
            report.dispositions.append(ColumnDisposition(col, "kept-forced", f"one-hot over all tokens; offending: {tokens}"))
            values = lowered
        # categorical (or forced boolean): one indicator per level, a single one for two levels
        levels = sorted(set(values))
        encode = levels[1:] if len(levels) == 2 else levels
        for lev in encode:
            feature_names.append(f"{col}={lev}")
            feature_cols.append([1.0 if v == lev else 0.0 for v in values])
        if kind == "categorical":
            report.dispositions.append(ColumnDisposition(col, "one-hot", f"levels: {', '.join(levels)}"))

    label_col = labels_cols[0]
    labels = [row[label_col].strip() for _, row in kept_rows]
    if group_cols:
        groups = [row[group_cols[0]].strip() for _, row in kept_rows]
        row_level = False
    else:
        groups = [f"row{line_no}" for line_no, _ in kept_rows]
        row_level = True
    if not feature_cols:
        raise IngestionError(f"{path}: no feature columns left after cleaning")
    rows = np.array(feature_cols, dtype=np.float64).T
    try:
        table = FeatureTable(
            tuple(feature_names),
            rows,
            labels,
            groups,
            level,
            meta={"row_level_groups": row_level, "source": str(path)},
        )
    except ContractError as exc:
        raise IngestionError(f"{path}: {exc}") from None
    return table, report
