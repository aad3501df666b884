import json

import numpy as np
import pytest

from bsm.cli import main
from bsm.io import read_csv_matrix, read_runlog, write_csv_matrix


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def pipeline(tmp_path):
    d = tmp_path
    assert run("gen", "--dim", 3, "--samples", 40_000, "--seed", 4, "--out", d / "s.csv",
               "--standardized-out", d / "sbar.csv") == 0
    assert run("mix", "--in", d / "s.csv", "--out", d / "m.csv", "--seed", 5, "--matrix-out", d / "A.csv") == 0
    assert run("whiten", "--in", d / "m.csv", "--out", d / "x.csv", "--transform-out", d / "tr") == 0
    return d


def test_full_pipeline(pipeline, capsys):
    d = pipeline
    x = read_csv_matrix(d / "x.csv")
    assert x.shape == (3, 40_000)
    np.testing.assert_allclose(np.cov(x, bias=True), np.eye(3), atol=1e-8)
    assert read_csv_matrix(d / "tr" / "W_pre.csv").shape == (3, 3)

    code = run("separate", "--in", d / "x.csv", "--out", d / "y.csv", "--reference", d / "sbar.csv",
               "--log", d / "log.jsonl", "--epochs", 2, "--state-out", d / "state")
    assert code == 0
    log = read_runlog(d / "log.jsonl")
    assert len(log) == 80
    ts = [r["t"] for r in log]
    assert ts == sorted(ts) and ts[-1] == 80_000
    assert (d / "state" / "W.csv").exists()

    capsys.readouterr()
    assert run("eval", "--outputs", d / "y.csv", "--reference", d / "sbar.csv", "--window", 2000,
               "--json-out", d / "eval.json") == 0
    report = json.loads((d / "eval.json").read_text())
    assert report["sir"]["mean_db"] > 20
    assert sorted(report["alignment"]["permutation"]) == [0, 1, 2]


def test_separate_resumes_from_state(pipeline):
    d = pipeline
    assert run("separate", "--in", d / "x.csv", "--out", d / "y1.csv", "--state-out", d / "st") == 0
    assert run("separate", "--in", d / "x.csv", "--out", d / "y2.csv", "--state-in", d / "st") == 0
    both = run("separate", "--in", d / "x.csv", "--out", d / "y12.csv", "--epochs", 2)
    assert both == 0
    assert (d / "y2.csv").read_bytes() == (d / "y12.csv").read_bytes()


def test_outputs_are_deterministic(pipeline):
    d = pipeline
    for name in ("a", "b"):
        assert run("separate", "--in", d / "x.csv", "--out", d / f"{name}.csv",
                   "--log", d / f"{name}.jsonl", "--reference", d / "sbar.csv") == 0
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()
    assert (d / "a.jsonl").read_bytes() == (d / "b.jsonl").read_bytes()


def test_config_file_and_flags(pipeline):
    d = pipeline
    (d / "cfg.json").write_text(json.dumps({"network": {"gamma_sq": 1.5}}))
    assert run("separate", "--in", d / "x.csv", "--out", d / "y.csv", "--config", d / "cfg.json") == 1
    assert not (d / "y.csv").exists()
    assert run("separate", "--in", d / "x.csv", "--out", d / "y.csv", "--config", d / "cfg.json",
               "--gamma-sq", 0.99) == 0


def test_validation_errors_leave_no_output(tmp_path):
    d = tmp_path
    write_csv_matrix(np.ones((2, 10)), d / "s.csv")
    write_csv_matrix(np.eye(3), d / "A.csv")
    assert run("mix", "--in", d / "s.csv", "--matrix", d / "A.csv", "--out", d / "m.csv") == 1
    assert not (d / "m.csv").exists()
    (d / "ragged.csv").write_text("1,2\n3\n")
    assert run("whiten", "--in", d / "ragged.csv", "--out", d / "x.csv") == 1
    assert not (d / "x.csv").exists()
    assert run("eval", "--outputs", d / "s.csv", "--reference", d / "A.csv") == 1
    assert run("gen", "--dim", 0, "--samples", 5, "--out", d / "g.csv") == 1
    assert not (d / "g.csv").exists()


def test_missing_file_is_io_error(tmp_path):
    assert run("whiten", "--in", tmp_path / "nope.csv", "--out", tmp_path / "x.csv") == 3


def test_demo_images_needs_three(tmp_path, image_paths):
    assert run("demo-images", *image_paths[:2], "--out-dir", tmp_path / "o") == 1
    assert not (tmp_path / "o").exists()


def test_demo_uniform_threshold_exit(tmp_path):
    # too few samples to separate, so the thresholds are missed
    code = run("demo-uniform", "--dim", 3, "--samples", 3000, "--out-dir", tmp_path)
    assert code == 2
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] is False
    assert len(read_runlog(tmp_path / "runlog.jsonl")) == 3


def test_check_theorem(capsys):
    assert run("check-theorem", "--trials", 100, "--workers", 4, "--seed", 2) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["trials"] == 100 and out["bound_violations"] == 0 and out["certificate_mismatches"] == 0
    assert out["tight_cases"] > 0
