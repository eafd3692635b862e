"""Break curves, their annotations, and the per-break feature record."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .mesh import DegenerateGeometryError

STAT_NAMES = ("min", "max", "mean", "median", "std", "range")


class ContractError(ValueError):
    """An input violated the documented preconditions of an operation."""


class InteriorEdge(str, Enum):
    BREAK = "break"
    ENDOSTEAL = "endosteal"


@dataclass(frozen=True)
class SummaryStats:
    min: float
    max: float
    mean: float
    median: float
    std: float
    range: float

    def as_tuple(self) -> tuple:
        return (self.min, self.max, self.mean, self.median, self.std, self.range)

    def __getitem__(self, name: str) -> float:
        return getattr(self, name)


def summary_stats(values) -> SummaryStats:
    """Min, max, mean, median, sample std (0 for a single value) and range."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ContractError("summary_stats needs at least one value")
    if not np.all(np.isfinite(arr)):
        raise ContractError("summary_stats got a non-finite value")
    # sorting first makes every statistic independent of input order
    arr = np.sort(arr)
    lo, hi = float(arr[0]), float(arr[-1])
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return SummaryStats(lo, hi, float(np.mean(arr)), float(np.median(arr)), std, hi - lo)


@dataclass(frozen=True)
class BreakCurve:
    fragment_id: str
    break_id: str
    points: np.ndarray
    angles_deg: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise ContractError(f"break {self.fragment_id}/{self.break_id}: need >= 2 points of shape (n, 3)")
        if not np.all(np.isfinite(pts)):
            raise ContractError(f"break {self.fragment_id}/{self.break_id}: non-finite point")
        angles = tuple(float(a) for a in self.angles_deg)
        if not angles:
            raise ContractError(f"break {self.fragment_id}/{self.break_id}: at least one angle measurement required")
        for a in angles:
            if not (0.0 < a < 360.0):
                raise ContractError(f"break {self.fragment_id}/{self.break_id}: angle {a} outside (0, 360)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "angles_deg", angles)


@dataclass(frozen=True)
class BreakAnnotations:
    fragment_id: str
    break_id: str
    interior_edge: InteriorEdge
    interrupted: bool = False
    ridge_notch: bool = False
    interior_notch: bool = False

    def __post_init__(self):
        object.__setattr__(self, "interior_edge", InteriorEdge(self.interior_edge))
        for name in ("interrupted", "ridge_notch", "interior_notch"):
            if not isinstance(getattr(self, name), (bool, np.bool_)):
                raise ContractError(f"{name} must be a boolean")


@dataclass(frozen=True)
class BreakRecord:
    fragment_id: str
    break_id: str
    num_angles: int
    angle_stats: SummaryStats
    interior_edge_is_break: int
    interrupted: int
    ridge_notch: int
    interior_notch: int
    chord_length: float
    arc_length: float
    arc_angle: float

    def feature_vector(self) -> list:
        return [
            float(self.num_angles),
            *self.angle_stats.as_tuple(),
            float(self.interior_edge_is_break),
            float(self.interrupted),
            float(self.ridge_notch),
            float(self.interior_notch),
            self.chord_length,
            self.arc_length,
            self.arc_angle,
        ]


def chord_length(curve: BreakCurve) -> float:
    return float(np.linalg.norm(curve.points[-1] - curve.points[0]))


def arc_length(curve: BreakCurve) -> float:
    return float(np.linalg.norm(np.diff(curve.points, axis=0), axis=1).sum())


def best_fit_direction(points) -> np.ndarray:
    """First principal direction of the centred points, largest component positive."""
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    if len(pts) < 2 or not np.any(np.abs(centered) > 0):
        raise DegenerateGeometryError("best-fit line undefined: points coincide")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    d = vt[0]
    i = int(np.argmax(np.abs(d)))
    return -d if d[i] < 0 else d


def arc_angle(curve: BreakCurve, principal_axis) -> float:
    """Angle in degrees, within [0, 90], between the curve's best-fit line and the axis."""
    axis = np.asarray(principal_axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    d = best_fit_direction(curve.points)
    c = min(1.0, abs(float(d @ axis)))
    return math.degrees(math.acos(c))


def build_break_record(curve: BreakCurve, annotations: BreakAnnotations, principal_axis) -> BreakRecord:
    if (curve.fragment_id, curve.break_id) != (annotations.fragment_id, annotations.break_id):
        raise ContractError(
            f"curve {curve.fragment_id}/{curve.break_id} paired with annotations "
            f"{annotations.fragment_id}/{annotations.break_id}"
        )
    return BreakRecord(
        fragment_id=curve.fragment_id,
        break_id=curve.break_id,
        num_angles=len(curve.angles_deg),
        angle_stats=summary_stats(curve.angles_deg),
        interior_edge_is_break=int(annotations.interior_edge is InteriorEdge.BREAK),
        interrupted=int(annotations.interrupted),
        ridge_notch=int(annotations.ridge_notch),
        interior_notch=int(annotations.interior_notch),
        chord_length=chord_length(curve),
        arc_length=arc_length(curve),
        arc_angle=arc_angle(curve, principal_axis),
    )


# ---------------------------------------------------------------------------
# CSV ingestion

ANNOTATION_COLUMNS = ("fragment_id", "break_id", "point_index", "x", "y", "z", "angle_deg", "is_endpoint")
BREAK_META_COLUMNS = ("fragment_id", "break_id", "interior_edge", "interrupted", "ridge_notch", "interior_notch")


class AnnotationError(ValueError):
    """Malformed annotation CSV; the message names file line and column."""


def parse_bool(token: str, where: str) -> bool:
    t = token.strip().lower()
    if t == "true":
        return True
    if t == "false":
        return False
    raise AnnotationError(f"{where}: expected true/false, got {token!r}")


def _check_header(reader, expected, path):
    if reader.fieldnames is None or list(reader.fieldnames[: len(expected)]) != list(expected):
        raise AnnotationError(f"{path}: header must start with {','.join(expected)}, got {reader.fieldnames}")


def check_point_order(points: np.ndarray, where: str) -> None:
    """Reject curves whose points are not listed along the curve.

    Each interior point must be no farther from either list neighbour than
    from the endpoint at the far end of the list (both endpoints for the
    middle point).
    """
    n = len(points)
    mid = (n - 1) / 2.0
    for i in range(1, n - 1):
        p = points[i]
        near = max(np.linalg.norm(p - points[i - 1]), np.linalg.norm(p - points[i + 1]))
        if i < mid:
            far = np.linalg.norm(p - points[-1])
        elif i > mid:
            far = np.linalg.norm(p - points[0])
        else:
            far = max(np.linalg.norm(p - points[0]), np.linalg.norm(p - points[-1]))
        if near > far:
            raise AnnotationError(f"{where}: point {i} is out of along-curve order")


def read_break_curves(path) -> list[BreakCurve]:
    """Read the one-row-per-point annotation CSV into curves (file order of first appearance)."""
    rows = defaultdict(list)
    order = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, ANNOTATION_COLUMNS, path)
        for line_no, row in enumerate(reader, start=2):
            where = f"{path}:{line_no}"
            key = (row["fragment_id"].strip(), row["break_id"].strip())
            if key not in rows:
                order.append(key)
            try:
                idx = int(row["point_index"])
                xyz = [float(row[c]) for c in "xyz"]
            except (TypeError, ValueError):
                raise AnnotationError(f"{where}: bad point_index or coordinate") from None
            endpoint = parse_bool(row["is_endpoint"], f"{where} column is_endpoint")
            angle_tok = (row["angle_deg"] or "").strip()
            if endpoint:
                angle = None
                if angle_tok:
                    raise AnnotationError(f"{where} column angle_deg: endpoint rows carry no angle")
            else:
                try:
                    angle = float(angle_tok)
                except ValueError:
                    raise AnnotationError(f"{where} column angle_deg: expected a number, got {angle_tok!r}") from None
            rows[key].append((idx, xyz, angle, endpoint, line_no))

    curves = []
    for key in order:
        pts = sorted(rows[key], key=lambda r: r[0])
        where = f"{path}: break {key[0]}/{key[1]}"
        idxs = [p[0] for p in pts]
        if len(set(idxs)) != len(idxs):
            raise AnnotationError(f"{where}: duplicate point_index")
        if len(pts) < 2 or not pts[0][3] or not pts[-1][3] or any(p[3] for p in pts[1:-1]):
            raise AnnotationError(f"{where}: endpoints must be exactly the first and last points")
        coords = np.array([p[1] for p in pts])
        check_point_order(coords, where)
        angles = [p[2] for p in pts[1:-1]]
        try:
            curves.append(BreakCurve(key[0], key[1], coords, angles))
        except ContractError as exc:
            raise AnnotationError(f"{where}: {exc}") from None
    return curves


def read_break_metadata(path) -> dict:
    """Map (fragment_id, break_id) to BreakAnnotations."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, BREAK_META_COLUMNS, path)
        for line_no, row in enumerate(reader, start=2):
            where = f"{path}:{line_no}"
            key = (row["fragment_id"].strip(), row["break_id"].strip())
            if key in out:
                raise AnnotationError(f"{where}: duplicate break {key[0]}/{key[1]}")
            edge = row["interior_edge"].strip().lower()
            if edge not in ("break", "endosteal"):
                raise AnnotationError(f"{where} column interior_edge: expected break/endosteal, got {edge!r}")
            out[key] = BreakAnnotations(
                key[0],
                key[1],
                InteriorEdge(edge),
                parse_bool(row["interrupted"], f"{where} column interrupted"),
                parse_bool(row["ridge_notch"], f"{where} column ridge_notch"),
                parse_bool(row["interior_notch"], f"{where} column interior_notch"),
            )
    return out
