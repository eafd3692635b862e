"""Command-line entry point: extract, experiment, spectral, audit, ingest.

Every command is a pure function of its inputs and resolved config. The
resolved config is written next to each output (``<output>.config.json``,
or into the manifest for ``extract``). ``--threads`` changes speed only
and is therefore not recorded.
"""
from __future__ import annotations

import argparse
import csv
import json
import secrets
import sys
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .breaks import AnnotationError, ContractError, build_break_record, read_break_curves, read_break_metadata
from .dataset import (
    COLUMN_KINDS,
    FragmentMeta,
    IngestionError,
    assemble_break_table,
    assemble_table,
    build_fragment_record,
    ingest_tabular_csv,
    read_features_csv,
    read_fragment_metadata,
    write_features_csv,
)
from .evaluation import PROTOCOLS, LeakageWarning, run_experiment, write_report_csv
from .learners import ALGORITHMS, ClassifierSpec
from .mesh import DegenerateGeometryError, MeshLoadError, load_mesh, mesh_features
from .synth import RandomDatasetConfig, format_audit_table, run_leakage_audit, write_audit_csv
from .unsupervised import (
    build_knn_graph,
    clustering_accuracy,
    export_scatter,
    kmeans,
    per_class_cluster_accuracy,
    spectral_embedding,
    standardize_full,
)

EXIT_OK, EXIT_VALIDATION, EXIT_DATA = 0, 2, 3


class ConfigError(ValueError):
    """Invalid command configuration; the message starts with the field path."""


class DataError(ValueError):
    """Unreadable or inconsistent input data."""


def _diag(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Config resolution

def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be a JSON object")
    return cfg


def _resolve(args, file_cfg: dict, keys) -> dict:
    """Merge config-file values with flags; flags win when given."""
    unknown = set(file_cfg) - set(keys) - {"seed", "threads"}
    if unknown:
        raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
    out = {}
    for key, default in keys.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else file_cfg.get(key, default)
    seed = args.seed if args.seed is not None else file_cfg.get("seed")
    if seed is None:
        seed = secrets.randbits(32)
        _diag(f"seed: {seed}")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed: must be a non-negative integer, got {seed!r}")
    out["seed"] = seed
    return out


def _require(cfg: dict, *names) -> None:
    for name in names:
        if cfg.get(name) in (None, ""):
            raise ConfigError(f"{name}: required")


def _int_field(cfg: dict, name: str, minimum: int) -> int:
    v = cfg[name]
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"{name}: must be an integer >= {minimum}, got {v!r}")
    return v


def _fraction_field(cfg: dict, name: str) -> float:
    v = cfg[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 < v < 1.0:
        raise ConfigError(f"{name}: must be a number in (0, 1), got {v!r}")
    return float(v)


def _write_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_table(path):
    try:
        return read_features_csv(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


class _Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self):
        self.paths = []

    def add(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def discard(self) -> None:
        for p in self.paths:
            if p.exists():
                p.unlink()


# ---------------------------------------------------------------------------
# Commands

def cmd_extract(cfg: dict) -> None:
    _require(cfg, "mesh_dir", "annotations", "break_meta", "fragment_meta", "out_prefix")
    try:
        frag_meta = read_fragment_metadata(cfg["fragment_meta"])
        curves = read_break_curves(cfg["annotations"])
        break_meta = read_break_metadata(cfg["break_meta"])
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None

    by_fragment: dict = {}
    for c in curves:
        if c.fragment_id not in frag_meta:
            raise DataError(f"annotation references unknown fragment_id {c.fragment_id!r}")
        if (c.fragment_id, c.break_id) not in break_meta:
            raise DataError(f"break {c.fragment_id}/{c.break_id} has no row in {cfg['break_meta']}")
        by_fragment.setdefault(c.fragment_id, []).append(c)
    annotated = {(c.fragment_id, c.break_id) for c in curves}
    for key in break_meta:
        if key not in annotated:
            raise DataError(f"break metadata {key[0]}/{key[1]} has no annotated curve")

    mesh_dir = Path(cfg["mesh_dir"])
    break_records, frag_records, manifest = [], [], []
    for fid, meta in frag_meta.items():
        if fid not in by_fragment:
            raise DataError(f"fragment {fid!r} has no annotated breaks")
        path = mesh_dir / f"{fid}.ply"
        if not path.is_file():
            raise DataError(f"missing mesh for fragment {fid!r}: {path}")
        try:
            feats = mesh_features(load_mesh(path, fid))
            records = [build_break_record(c, break_meta[(fid, c.break_id)], feats["frame"].principal_axis)
                       for c in by_fragment[fid]]
            frag = build_fragment_record(
                FragmentMeta(fid, meta.label, meta.trabecula),
                (feats["volume"], feats["surface_area"], feats["bbox"]),
                records,
            )
        except (MeshLoadError, DegenerateGeometryError, ContractError, AnnotationError) as exc:
            raise DataError(f"fragment {fid}: {exc}") from None
        if not feats["watertight"]:
            _diag(f"warning: mesh for fragment {fid} is not watertight; volume is approximate")
        break_records.extend(records)
        frag_records.append(frag)
        manifest.append((fid, feats["watertight"], feats["n_vertices"], feats["n_faces"], len(records)))

    labels = {fid: m.label for fid, m in frag_meta.items()}
    prefix = cfg["out_prefix"]
    outputs = _Outputs()
    try:
        write_features_csv(assemble_break_table(break_records, labels), outputs.add(f"{prefix}_breaks.csv"))
        write_features_csv(assemble_table(frag_records), outputs.add(f"{prefix}_fragments.csv"))
        with open(outputs.add(f"{prefix}_manifest.txt"), "w") as fh:
            fh.write("config " + json.dumps(cfg, sort_keys=True) + "\n")
            fh.write(f"fragments {len(frag_records)}\nbreaks {len(break_records)}\n")
            n_open = sum(1 for m in manifest if not m[1])
            fh.write(f"non_watertight {n_open}\n")
            fh.write("fragment_id,watertight,n_vertices,n_faces,n_breaks\n")
            for fid, tight, nv, nf, nb in manifest:
                fh.write(f"{fid},{str(tight).lower()},{nv},{nf},{nb}\n")
    except BaseException:
        outputs.discard()
        raise


def _parse_specs(raw, seed: int) -> list:
    if raw is None:
        return [ClassifierSpec(name, {}, seed) for name in ALGORITHMS]
    if isinstance(raw, str):
        raw = [{"algorithm": a.strip()} for a in raw.split(",") if a.strip()]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("specs: must be a non-empty list")
    specs = []
    for i, item in enumerate(raw):
        if isinstance(item, str):
            item = {"algorithm": item}
        if isinstance(item, dict) and "seed" not in item:
            item = {**item, "seed": seed}
        try:
            specs.append(ClassifierSpec.from_dict(item))
        except (ContractError, TypeError, ValueError) as exc:
            raise ConfigError(f"specs[{i}]: {exc}") from None
    return specs


def cmd_experiment(cfg: dict, threads: int) -> None:
    _require(cfg, "dataset", "out")
    if cfg["protocol"] not in PROTOCOLS:
        raise ConfigError(f"protocol: must be one of {list(PROTOCOLS)}, got {cfg['protocol']!r}")
    n_trials = _int_field(cfg, "n_trials", 1)
    test_fraction = _fraction_field(cfg, "test_fraction")
    specs = _parse_specs(cfg["specs"], cfg["seed"])
    cfg["specs"] = [s.to_dict() for s in specs]
    table = _read_table(cfg["dataset"])
    if cfg["protocol"] == "row_level_unsafe":
        _diag("warning: row_level_unsafe ignores fragment membership; accuracies are not fragment-level estimates")
    reports = []
    for spec in specs:
        try:
            reports.append(run_experiment(table, spec, cfg["protocol"], n_trials, test_fraction, cfg["seed"], threads))
        except ContractError as exc:
            raise ConfigError(f"protocol: {exc}") from None
    outputs = _Outputs()
    try:
        write_report_csv(reports, outputs.add(cfg["out"]))
        _write_config(cfg, outputs.add(f"{cfg['out']}.config.json"))
    except BaseException:
        outputs.discard()
        raise


def cmd_spectral(cfg: dict) -> None:
    _require(cfg, "dataset", "out")
    k = _int_field(cfg, "k", 1)
    k_neighbors = _int_field(cfg, "k_neighbors", 1)
    if cfg["k_dims"] is None:
        cfg["k_dims"] = k
    k_dims = _int_field(cfg, "k_dims", 1)
    if cfg.get("scatter") and k_dims != 2:
        raise ConfigError(f"k_dims: scatter export needs k_dims = 2, got {k_dims}")
    table = _read_table(cfg["dataset"])
    try:
        graph = build_knn_graph(standardize_full(table.rows), k_neighbors)
        emb = spectral_embedding(graph, k_dims)
        labels, _ = kmeans(emb.coordinates, k, rng=np.random.default_rng(cfg["seed"]))
    except ContractError as exc:
        raise ConfigError(f"k: {exc}") from None
    acc = clustering_accuracy(labels, table.labels)
    per_class = per_class_cluster_accuracy(labels, table.labels)
    outputs = _Outputs()
    try:
        with open(outputs.add(cfg["out"]), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "k", "accuracy", *(f"acc_class_{c}" for c in per_class), "seed"])
            w.writerow([table.level, k, repr(acc), *(repr(v) for v in per_class.values()), cfg["seed"]])
        if cfg.get("scatter"):
            ids = table.group_ids if table.row_ids is None else [f"{g}/{b}" for g, b in zip(table.group_ids, table.row_ids)]
            export_scatter(emb, table.labels, outputs.add(cfg["scatter"]), ids)
        _write_config(cfg, outputs.add(f"{cfg['out']}.config.json"))
    except BaseException:
        outputs.discard()
        raise


def cmd_audit(cfg: dict, threads: int) -> None:
    _require(cfg, "out")
    n_trials = _int_field(cfg, "n_trials", 1)
    train_fraction = _fraction_field(cfg, "train_fraction")
    factor = _int_field(cfg, "bootstrap_factor", 1)
    try:
        data_cfg = RandomDatasetConfig(
            n_fragments=_int_field(cfg, "n_fragments", 2),
            breaks_per_fragment=_int_field(cfg, "breaks_per_fragment", 1),
            n_fragment_features=_int_field(cfg, "n_fragment_features", 1),
            n_break_features=_int_field(cfg, "n_break_features", 1),
            seed=cfg["seed"],
        )
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    report = run_leakage_audit(data_cfg, n_trials, None, train_fraction, factor, threads)
    table = format_audit_table(report)
    outputs = _Outputs()
    try:
        write_audit_csv(report, outputs.add(cfg["out"]))
        with open(outputs.add(cfg["table"] or f"{cfg['out']}.txt"), "w") as fh:
            fh.write(table)
        _write_config(cfg, outputs.add(f"{cfg['out']}.config.json"))
    except BaseException:
        outputs.discard()
        raise
    sys.stdout.write(table)


def cmd_ingest(cfg: dict) -> None:
    _require(cfg, "input", "schema", "out")
    schema = cfg["schema"]
    if isinstance(schema, str):
        schema = _load_config(schema)
        cfg["schema"] = schema
    if not isinstance(schema, dict) or not isinstance(schema.get("columns"), dict):
        raise ConfigError("schema.columns: must be an object mapping column name to kind")
    for name, kind in schema["columns"].items():
        if kind not in COLUMN_KINDS:
            raise ConfigError(f"schema.columns.{name}: kind must be one of {list(COLUMN_KINDS)}, got {kind!r}")
    try:
        table, report = ingest_tabular_csv(cfg["input"], schema)
    except (OSError, IngestionError) as exc:
        raise DataError(str(exc)) from None
    for d in report.dispositions:
        if d.action in ("dropped-corrupted", "kept-forced"):
            _diag(f"warning: column {d.column} {d.action}: {d.detail}")
    if report.rejected_rows:
        _diag(f"warning: {len(report.rejected_rows)} row(s) rejected for missing values")
    if table.meta.get("row_level_groups"):
        _diag("warning: no group column; only row_level_unsafe evaluation applies to this table")
    outputs = _Outputs()
    try:
        write_features_csv(table, outputs.add(cfg["out"]))
        with open(outputs.add(cfg["report"] or f"{cfg['out']}.report.txt"), "w") as fh:
            fh.write(report.to_text())
        _write_config(cfg, outputs.add(f"{cfg['out']}.config.json"))
    except BaseException:
        outputs.discard()
        raise


# ---------------------------------------------------------------------------
# Parser

_KEYS = {
    "extract": {"mesh_dir": None, "annotations": None, "break_meta": None, "fragment_meta": None, "out_prefix": None},
    "experiment": {"dataset": None, "protocol": "fragment_level", "specs": None, "n_trials": 300,
                   "test_fraction": 0.25, "out": None},
    "spectral": {"dataset": None, "k": 2, "k_dims": None, "k_neighbors": 10, "out": None, "scatter": None},
    "audit": {"n_trials": 100, "train_fraction": 0.75, "bootstrap_factor": 100, "n_fragments": 200,
              "breaks_per_fragment": 7, "n_fragment_features": 34, "n_break_features": 6, "out": None, "table": None},
    "ingest": {"input": None, "schema": None, "out": None, "report": None},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (generated and printed when omitted)")
    common.add_argument("--threads", type=int, help="worker processes; results do not depend on it")
    common.add_argument("--config", help="JSON config; flags override its values")

    p = argparse.ArgumentParser(prog="breakagent", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", parents=[common], help="mesh + annotations to feature CSVs")
    s.add_argument("--mesh-dir", dest="mesh_dir", help="directory of <fragment_id>.ply files")
    s.add_argument("--annotations", help="per-point break-curve CSV")
    s.add_argument("--break-meta", dest="break_meta", help="per-break categorical annotations CSV")
    s.add_argument("--fragment-meta", dest="fragment_meta", help="fragment_id,label,trabecula CSV")
    s.add_argument("--out-prefix", dest="out_prefix")

    s = sub.add_parser("experiment", parents=[common], help="repeated grouped train/test trials")
    s.add_argument("--dataset", help="features CSV")
    s.add_argument("--protocol", choices=PROTOCOLS)
    s.add_argument("--algorithms", dest="specs", help="comma-separated algorithm names (default: all)")
    s.add_argument("--n-trials", dest="n_trials", type=int)
    s.add_argument("--test-fraction", dest="test_fraction", type=float)
    s.add_argument("--out")

    s = sub.add_parser("spectral", parents=[common], help="spectral clustering report and scatter")
    s.add_argument("--dataset")
    s.add_argument("--k", type=int, help="number of clusters")
    s.add_argument("--k-dims", dest="k_dims", type=int, help="embedding dimension (default: k)")
    s.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    s.add_argument("--out")
    s.add_argument("--scatter", help="write the 2-D embedding here")

    s = sub.add_parser("audit", parents=[common], help="randomized-data leakage audit")
    s.add_argument("--n-trials", dest="n_trials", type=int)
    s.add_argument("--train-fraction", dest="train_fraction", type=float)
    s.add_argument("--bootstrap-factor", dest="bootstrap_factor", type=int)
    s.add_argument("--out")
    s.add_argument("--table", help="human-readable table path (default: <out>.txt)")

    s = sub.add_parser("ingest", parents=[common], help="clean an external CSV by a column schema")
    s.add_argument("--input")
    s.add_argument("--schema", help="schema JSON file")
    s.add_argument("--out")
    s.add_argument("--report", help="cleaning report path (default: <out>.report.txt)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    try:
        file_cfg = _load_config(args.config)
        cfg = _resolve(args, file_cfg, _KEYS[args.command])
        threads = args.threads if args.threads is not None else file_cfg.get("threads", 1)
        if not isinstance(threads, int) or threads < 1:
            raise ConfigError(f"threads: must be an integer >= 1, got {threads!r}")
        with threadpool_limits(1), warnings.catch_warnings():
            warnings.simplefilter("always", LeakageWarning)
            if args.command == "extract":
                cmd_extract(cfg)
            elif args.command == "experiment":
                cmd_experiment(cfg, threads)
            elif args.command == "spectral":
                cmd_spectral(cfg)
            elif args.command == "audit":
                cmd_audit(cfg, threads)
            else:
                cmd_ingest(cfg)
    except ConfigError as exc:
        _diag(f"error: {exc}")
        return EXIT_VALIDATION
    except DataError as exc:
        _diag(f"error: {exc}")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
