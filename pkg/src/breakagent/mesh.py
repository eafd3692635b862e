"""Triangle meshes of scanned fragments and the fragment-level geometry derived from them.

All lengths are millimetres as stored in the scan; nothing is rescaled.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class MeshLoadError(ValueError):
    """Raised when a PLY file cannot be turned into a valid triangle mesh."""


class DegenerateGeometryError(ValueError):
    """Raised when a point set has no well-defined direction or frame."""


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    fragment_id: str = ""

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshLoadError(f"vertices must be (n, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshLoadError(f"faces must be (m, 3), got {faces.shape}")
        if len(vertices) < 3 or len(faces) < 1:
            raise MeshLoadError("a mesh needs at least 3 vertices and 1 face")
        if not np.all(np.isfinite(vertices)):
            raise MeshLoadError("non-finite vertex coordinate")
        bad = np.flatnonzero((faces < 0).any(axis=1) | (faces >= len(vertices)).any(axis=1))
        if bad.size:
            raise MeshLoadError(
                f"face {bad[0]} has vertex index out of range [0, {len(vertices)}): {faces[bad[0]].tolist()}"
            )
        repeated = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        if repeated.any():
            i = int(np.flatnonzero(repeated)[0])
            raise MeshLoadError(f"face {i} repeats a vertex index: {faces[i].tolist()}")
        vertices.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @property
    def triangles(self) -> np.ndarray:
        """(m, 3, 3) array of face corner coordinates."""
        return self.vertices[self.faces]


@dataclass(frozen=True)
class PrincipalFrame:
    centroid: np.ndarray
    axes: np.ndarray  # rows are unit axes, descending variance
    variances: np.ndarray = field(repr=True)

    @property
    def principal_axis(self) -> np.ndarray:
        return self.axes[0]


# ---------------------------------------------------------------------------
# PLY input / output

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _Property:
    name: str
    dtype: str
    count_dtype: str | None = None  # set for list properties


@dataclass
class _Element:
    name: str
    count: int
    properties: list = field(default_factory=list)


def _parse_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshLoadError("byte 0: not a PLY file (missing 'ply' magic or 'end_header')")
    nl = data.find(b"\n", end)
    body_offset = len(data) if nl < 0 else nl + 1
    fmt = None
    elements: list[_Element] = []
    offset = 0
    for raw in data[:end].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        tokens = line.split()
        where = f"byte {offset}"
        offset += len(raw) + 1
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise MeshLoadError(f"{where}: unsupported PLY format {line!r}")
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise MeshLoadError(f"{where}: malformed element line {line!r}")
            elements.append(_Element(tokens[1], int(tokens[2])))
        elif tokens[0] == "property":
            if not elements:
                raise MeshLoadError(f"{where}: property before any element")
            try:
                if tokens[1] == "list":
                    prop = _Property(tokens[4], _PLY_TYPES[tokens[3]], _PLY_TYPES[tokens[2]])
                else:
                    prop = _Property(tokens[2], _PLY_TYPES[tokens[1]])
            except (IndexError, KeyError):
                raise MeshLoadError(f"{where}: malformed property line {line!r}") from None
            elements[-1].properties.append(prop)
        else:
            raise MeshLoadError(f"{where}: unexpected header line {line!r}")
    if fmt is None:
        raise MeshLoadError("header has no format line")
    return fmt, elements, body_offset


def _read_ascii(text: bytes, elements, body_offset):
    lines = text[body_offset:].decode("ascii", errors="replace").splitlines()
    lines = [ln for ln in lines if ln.strip()]
    out = {}
    pos = 0
    for el in elements:
        if pos + el.count > len(lines):
            raise MeshLoadError(f"element '{el.name}': expected {el.count} rows, file ends after {len(lines) - pos}")
        rows = []
        for i in range(el.count):
            tokens = lines[pos + i].split()
            record = {}
            t = 0
            try:
                for prop in el.properties:
                    if prop.count_dtype:
                        n = int(tokens[t])
                        record[prop.name] = [int(float(v)) for v in tokens[t + 1:t + 1 + n]]
                        if len(record[prop.name]) != n:
                            raise IndexError
                        t += 1 + n
                    else:
                        record[prop.name] = float(tokens[t])
                        t += 1
            except (IndexError, ValueError):
                raise MeshLoadError(f"element '{el.name}' row {i}: cannot parse {lines[pos + i]!r}") from None
            rows.append(record)
        out[el.name] = rows
        pos += el.count
    return out


def _read_binary(data: bytes, elements, body_offset):
    out = {}
    offset = body_offset
    for el in elements:
        scalar_only = all(p.count_dtype is None for p in el.properties)
        if scalar_only:
            dtype = np.dtype([(p.name, "<" + p.dtype) for p in el.properties])
            nbytes = dtype.itemsize * el.count
            if offset + nbytes > len(data):
                raise MeshLoadError(f"byte {offset}: element '{el.name}' truncated")
            arr = np.frombuffer(data, dtype=dtype, count=el.count, offset=offset)
            out[el.name] = {p.name: arr[p.name] for p in el.properties}
            offset += nbytes
            continue
        rows = []
        for i in range(el.count):
            record = {}
            for prop in el.properties:
                if prop.count_dtype:
                    cdt = np.dtype("<" + prop.count_dtype)
                    if offset + cdt.itemsize > len(data):
                        raise MeshLoadError(f"byte {offset}: element '{el.name}' row {i} truncated")
                    n = int(np.frombuffer(data, cdt, 1, offset)[0])
                    offset += cdt.itemsize
                    vdt = np.dtype("<" + prop.dtype)
                    if offset + n * vdt.itemsize > len(data):
                        raise MeshLoadError(f"byte {offset}: element '{el.name}' row {i} truncated")
                    record[prop.name] = np.frombuffer(data, vdt, n, offset).astype(np.int64).tolist()
                    offset += n * vdt.itemsize
                else:
                    vdt = np.dtype("<" + prop.dtype)
                    if offset + vdt.itemsize > len(data):
                        raise MeshLoadError(f"byte {offset}: element '{el.name}' row {i} truncated")
                    record[prop.name] = float(np.frombuffer(data, vdt, 1, offset)[0])
                    offset += vdt.itemsize
            rows.append(record)
        out[el.name] = rows
    return out


def _column(element_data, name):
    if isinstance(element_data, dict):
        return np.asarray(element_data[name], dtype=np.float64)
    return np.array([row[name] for row in element_data], dtype=np.float64)


def _fan_triangulate(polygons) -> np.ndarray:
    tris = []
    for i, poly in enumerate(polygons):
        if len(poly) < 3:
            raise MeshLoadError(f"element 'face' row {i}: polygon with {len(poly)} indices cannot be triangulated")
        for j in range(1, len(poly) - 1):
            tris.append((poly[0], poly[j], poly[j + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def load_mesh(path, fragment_id: str | None = None) -> TriangleMesh:
    """Read an ASCII or binary little-endian PLY file.

    Polygons are fan-triangulated and vertex order is preserved. Properties
    other than ``x, y, z`` and the face index list are ignored.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    fmt, elements, body_offset = _parse_header(data)
    names = [el.name for el in elements]
    if "vertex" not in names or "face" not in names:
        raise MeshLoadError(f"PLY needs 'vertex' and 'face' elements, found {names}")
    vertex_el = elements[names.index("vertex")]
    face_el = elements[names.index("face")]
    missing = {"x", "y", "z"} - {p.name for p in vertex_el.properties}
    if missing:
        raise MeshLoadError(f"element 'vertex' lacks properties {sorted(missing)}")
    list_props = [p for p in face_el.properties if p.count_dtype]
    if not list_props:
        raise MeshLoadError("element 'face' has no vertex index list")
    index_name = next((p.name for p in list_props if p.name in ("vertex_indices", "vertex_index")), list_props[0].name)

    parsed = _read_ascii(data, elements, body_offset) if fmt == "ascii" else _read_binary(data, elements, body_offset)
    vertices = np.column_stack([_column(parsed["vertex"], k) for k in "xyz"])
    faces = _fan_triangulate([row[index_name] for row in parsed["face"]])
    if fragment_id is None:
        fragment_id = os.path.splitext(os.path.basename(str(path)))[0]
    return TriangleMesh(vertices, faces, fragment_id)


def write_ply(mesh: TriangleMesh, path, binary: bool = False) -> None:
    """Write ``mesh`` as PLY (used for fixtures and round trips)."""
    header = [
        "ply",
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(mesh.vertices.astype("<f8").tobytes())
            rec = np.zeros(len(mesh.faces), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            rec["n"] = 3
            rec["idx"] = mesh.faces
            fh.write(rec.tobytes())
        else:
            for v in mesh.vertices:
                fh.write(" ".join(repr(float(c)) for c in v).encode("ascii") + b"\n")
            for f in mesh.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


# ---------------------------------------------------------------------------
# Geometry

def surface_area(mesh: TriangleMesh) -> float:
    tri = mesh.triangles
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return float(0.5 * np.linalg.norm(cross, axis=1).sum())


def is_watertight(mesh: TriangleMesh) -> bool:
    """True when every undirected edge is shared by exactly two faces."""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges.sort(axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def enclosed_volume(mesh: TriangleMesh) -> tuple[float, bool]:
    """Volume by the divergence theorem, plus a watertightness flag.

    The signed tetrahedron sum is taken in absolute value, so global face
    orientation does not matter. For open meshes the number is still
    returned; the flag tells the caller whether to trust it.
    """
    tri = mesh.triangles
    # shifting by a vertex keeps the sum exact for closed surfaces and tames cancellation
    tri = tri - mesh.vertices.mean(axis=0)
    signed = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0
    return float(abs(signed)), is_watertight(mesh)


def _sign_normalize(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def principal_frame(mesh_or_points) -> PrincipalFrame:
    """PCA frame of the vertex cloud (vertex mean, not area weighted).

    Axes come back as rows ordered by descending variance, each flipped so
    its largest-magnitude component is positive. Axes whose variances tie
    exactly are ordered lexicographically (descending).
    """
    pts = mesh_or_points.vertices if isinstance(mesh_or_points, TriangleMesh) else np.asarray(mesh_or_points, float)
    if len(pts) < 3:
        raise DegenerateGeometryError("need at least 3 points for a principal frame")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(float(np.abs(centered).max()), 1e-300)
    # collinear or coincident clouds have at most one non-zero variance
    if evals[1] <= 1e-12 * scale**2:
        raise DegenerateGeometryError("vertices are collinear or coincident; principal frame undefined")
    evals = np.clip(evals, 0.0, None)
    axes = [_sign_normalize(evecs[:, i]) for i in range(3)]
    order = sorted(range(3), key=lambda i: (-evals[i], tuple(-axes[i])))
    axes = np.array([axes[i] for i in order])
    return PrincipalFrame(centroid=centroid, axes=axes, variances=evals[order])


def bounding_box_dims(mesh: TriangleMesh, frame: PrincipalFrame | None = None) -> tuple[float, float, float]:
    """Extents of the vertices along the frame axes, sorted as (length, width, depth)."""
    if frame is None:
        frame = principal_frame(mesh)
    proj = (mesh.vertices - frame.centroid) @ frame.axes.T
    ext = np.sort(proj.max(axis=0) - proj.min(axis=0))[::-1]
    return float(ext[0]), float(ext[1]), float(ext[2])


def mesh_features(mesh: TriangleMesh) -> dict:
    """Volume, area, box dimensions and diagnostics for one fragment mesh."""
    frame = principal_frame(mesh)
    volume, watertight = enclosed_volume(mesh)
    return {
        "volume": volume,
        "surface_area": surface_area(mesh),
        "bbox": bounding_box_dims(mesh, frame),
        "watertight": watertight,
        "frame": frame,
        "n_vertices": len(mesh.vertices),
        "n_faces": len(mesh.faces),
    }
