import csv
import json

import pytest

from breakagent.cli import main
from breakagent.dataset import read_features_csv, write_features_csv
from breakagent.synth import generate_blob_dataset, generate_random_dataset, RandomDatasetConfig


def extract_args(inputs, prefix):
    return ["extract", "--seed", "1", "--mesh-dir", str(inputs["mesh_dir"]), "--annotations", str(inputs["annotations"]),
            "--break-meta", str(inputs["break_meta"]), "--fragment-meta", str(inputs["fragment_meta"]),
            "--out-prefix", str(prefix)]


def test_extract_counts_and_determinism(extract_inputs, tmp_path):
    assert main(extract_args(extract_inputs, tmp_path / "run1")) == 0
    assert main(extract_args(extract_inputs, tmp_path / "run2")) == 0
    breaks = read_features_csv(tmp_path / "run1_breaks.csv")
    frags = read_features_csv(tmp_path / "run1_fragments.csv")
    assert breaks.rows.shape == (7, 14)
    assert frags.rows.shape == (2, 66)
    for suffix in ("_breaks.csv", "_fragments.csv"):
        assert (tmp_path / f"run1{suffix}").read_bytes() == (tmp_path / f"run2{suffix}").read_bytes()
    manifest = (tmp_path / "run1_manifest.txt").read_text()
    assert "F0,true,8,12,3" in manifest and "F1,true,8,12,4" in manifest


def test_extract_unknown_fragment(extract_inputs, tmp_path):
    with open(extract_inputs["annotations"], "a") as fh:
        fh.write("GHOST,B0,0,0,0,0,,true\nGHOST,B0,1,1,1,1,,true\n")
    assert main(extract_args(extract_inputs, tmp_path / "out")) == 3
    assert not list(tmp_path.glob("out_*"))


def test_extract_missing_mesh(extract_inputs, tmp_path, capsys):
    (extract_inputs["mesh_dir"] / "F1.ply").unlink()
    assert main(extract_args(extract_inputs, tmp_path / "out")) == 3
    assert "F1" in capsys.readouterr().err
    assert not list(tmp_path.glob("out_*"))


def test_extract_open_mesh_warns(extract_inputs, tmp_path, capsys):
    path = extract_inputs["mesh_dir"] / "F0.ply"
    lines = path.read_text().splitlines()
    lines = [l.replace("element face 12", "element face 11") for l in lines][:-1]
    path.write_text("\n".join(lines) + "\n")
    assert main(extract_args(extract_inputs, tmp_path / "out")) == 0
    assert "not watertight" in capsys.readouterr().err
    assert "F0,false" in (tmp_path / "out_manifest.txt").read_text()


@pytest.fixture
def blob_csv(tmp_path):
    path = tmp_path / "blobs.csv"
    write_features_csv(generate_blob_dataset(20, 2, 6.0, 0), path)
    return path


def test_experiment_report_rows_and_rerun(blob_csv, tmp_path):
    out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
    args = ["experiment", "--seed", "5", "--dataset", str(blob_csv), "--algorithms", "lda,knn,gaussian_nb",
            "--n-trials", "4"]
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2), "--threads", "2"]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    rows = list(csv.DictReader(open(out1)))
    assert [r["algorithm"] for r in rows] == ["lda", "knn", "gaussian_nb"]
    cfg = json.loads((tmp_path / "r1.csv.config.json").read_text())
    assert cfg["seed"] == 5 and cfg["n_trials"] == 4


def test_experiment_config_file_and_override(blob_csv, tmp_path):
    cfg = {"dataset": str(blob_csv), "specs": [{"algorithm": "knn", "params": {"k": 3}}], "n_trials": 2,
           "out": str(tmp_path / "r.csv"), "seed": 1}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["experiment", "--config", str(tmp_path / "c.json"), "--n-trials", "3"]) == 0
    (row,) = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert row["algorithm"] == "knn(k=3)" and row["n_trials"] == "3"


def test_experiment_validation_errors(blob_csv, tmp_path, capsys):
    out = str(tmp_path / "r.csv")
    bad = {"dataset": str(blob_csv), "specs": [{"algorithm": "knn", "params": {"k": 0}}], "out": out}
    (tmp_path / "c.json").write_text(json.dumps(bad))
    assert main(["experiment", "--seed", "1", "--config", str(tmp_path / "c.json")]) == 2
    assert "specs[0]" in capsys.readouterr().err

    breaks = tmp_path / "breaks.csv"
    write_features_csv(generate_random_dataset(RandomDatasetConfig(n_fragments=8)), breaks)
    assert main(["experiment", "--seed", "1", "--dataset", str(breaks), "--out", out, "--n-trials", "1"]) == 2
    assert main(["experiment", "--seed", "1", "--dataset", str(tmp_path / "none.csv"), "--out", out]) == 3


def test_seed_is_generated_and_printed(blob_csv, tmp_path, capsys):
    assert main(["experiment", "--dataset", str(blob_csv), "--algorithms", "lda", "--n-trials", "1",
                 "--out", str(tmp_path / "r.csv")]) == 0
    assert "seed:" in capsys.readouterr().err


def test_spectral_report_and_scatter(blob_csv, tmp_path):
    out, scatter = tmp_path / "s.csv", tmp_path / "xy.csv"
    assert main(["spectral", "--seed", "0", "--dataset", str(blob_csv), "--out", str(out), "--scatter", str(scatter)]) == 0
    (row,) = list(csv.DictReader(open(out)))
    assert list(row) == ["level", "k", "accuracy", "acc_class_A", "acc_class_B", "seed"]
    assert float(row["accuracy"]) == 1.0
    assert open(scatter).readline().strip() == "id,x,y,label"
    assert main(["spectral", "--seed", "0", "--dataset", str(blob_csv), "--out", str(out),
                 "--scatter", str(scatter), "--k-dims", "3"]) == 2


def test_audit_command(tmp_path):
    cfg = {"n_fragments": 16, "breaks_per_fragment": 2, "n_fragment_features": 3, "n_break_features": 2,
           "bootstrap_factor": 3}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    base = ["audit", "--seed", "2", "--config", str(tmp_path / "c.json"), "--n-trials", "2"]
    assert main(base + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(base + ["--out", str(tmp_path / "b.csv"), "--threads", "2"]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert len(rows) == 18
    assert list(rows[0]) == ["protocol", "algorithm", "mean_accuracy", "std_accuracy", "n_trials", "seed"]
    assert (tmp_path / "a.csv.txt").read_text().startswith("Algorithm")
    assert main(["audit", "--seed", "2", "--n-trials", "0", "--out", str(tmp_path / "z.csv")]) == 2
    assert not (tmp_path / "z.csv").exists()


def test_ingest_command(tmp_path, capsys):
    (tmp_path / "ext.csv").write_text("agent,len,notch\nc,1,present\nh,2,absent\nc,3,2\nh,4,absent\n")
    schema = {"columns": {"agent": "label", "len": "numeric", "notch": "boolean"}}
    (tmp_path / "schema.json").write_text(json.dumps(schema))
    out = tmp_path / "clean.csv"
    assert main(["ingest", "--seed", "0", "--input", str(tmp_path / "ext.csv"), "--schema",
                 str(tmp_path / "schema.json"), "--out", str(out)]) == 0
    err = capsys.readouterr().err
    assert "dropped-corrupted" in err and "row_level_unsafe" in err
    assert "notch: dropped-corrupted" in (tmp_path / "clean.csv.report.txt").read_text()
    assert read_features_csv(out).column_names == ("len",)
    schema["columns"]["len"] = "weird"
    (tmp_path / "schema.json").write_text(json.dumps(schema))
    assert main(["ingest", "--seed", "0", "--input", str(tmp_path / "ext.csv"), "--schema",
                 str(tmp_path / "schema.json"), "--out", str(out)]) == 2


def test_bad_flags_exit_2():
    assert main(["audit", "--n-trials", "abc"]) == 2
    assert main([]) == 2
