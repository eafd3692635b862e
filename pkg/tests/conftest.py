import csv

import numpy as np
import pytest

from breakagent.mesh import TriangleMesh, write_ply

BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # z = 0
    [4, 5, 6], [4, 6, 7],  # z = c
    [0, 1, 5], [0, 5, 4],  # y = 0
    [2, 3, 7], [2, 7, 6],  # y = b
    [1, 2, 6], [1, 6, 5],  # x = a
    [0, 4, 7], [0, 7, 3],  # x = 0
])


def box_mesh(a=1.0, b=1.0, c=1.0, fragment_id="box"):
    v = np.array([
        [0, 0, 0], [a, 0, 0], [a, b, 0], [0, b, 0],
        [0, 0, c], [a, 0, c], [a, b, c], [0, b, c],
    ], dtype=float)
    return TriangleMesh(v, BOX_FACES, fragment_id)


def tetra_mesh(fragment_id="tet"):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriangleMesh(v, f, fragment_id)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def write_extract_inputs(root, breaks_per_fragment=(3, 4), labels=("carnivore", "hammerstone")):
    """Box meshes plus matching annotation, break-metadata and fragment-metadata CSVs."""
    mesh_dir = root / "meshes"
    mesh_dir.mkdir()
    rng = np.random.default_rng(7)
    ann = root / "annotations.csv"
    meta = root / "break_meta.csv"
    frag = root / "fragments.csv"
    with open(ann, "w", newline="") as fa, open(meta, "w", newline="") as fm, open(frag, "w", newline="") as ff:
        wa, wm, wf = csv.writer(fa), csv.writer(fm), csv.writer(ff)
        wa.writerow(["fragment_id", "break_id", "point_index", "x", "y", "z", "angle_deg", "is_endpoint"])
        wm.writerow(["fragment_id", "break_id", "interior_edge", "interrupted", "ridge_notch", "interior_notch"])
        wf.writerow(["fragment_id", "label", "trabecula"])
        for i, n_breaks in enumerate(breaks_per_fragment):
            fid = f"F{i}"
            write_ply(box_mesh(4.0 + i, 2.0, 1.0, fid), mesh_dir / f"{fid}.ply", binary=bool(i % 2))
            wf.writerow([fid, labels[i % len(labels)], "true" if i % 2 else "false"])
            for b in range(n_breaks):
                bid = f"B{b}"
                start = rng.uniform(0, 1, 3)
                step = rng.uniform(0.2, 0.5, 3)
                n_pts = 5 + b
                for p in range(n_pts):
                    end = p in (0, n_pts - 1)
                    xyz = start + p * step
                    angle = "" if end else f"{rng.uniform(60, 140):.3f}"
                    wa.writerow([fid, bid, p, *(f"{c:.6f}" for c in xyz), angle, "true" if end else "false"])
                wm.writerow([fid, bid, "break" if b % 2 else "endosteal", "false", "true" if b == 0 else "false", "false"])
    return {"mesh_dir": mesh_dir, "annotations": ann, "break_meta": meta, "fragment_meta": frag}


@pytest.fixture
def extract_inputs(tmp_path):
    return write_extract_inputs(tmp_path)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
