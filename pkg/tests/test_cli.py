import json

import numpy as np
import pytest
from click.testing import CliRunner

from idmap.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE, main
from idmap.core import read_matrix, write_matrix

SMALL = ["--k", "40", "--k2", "8", "--modes", "10"]


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, args):
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture
def circle_dir(runner, tmp_path):
    r = invoke(runner, ["--out", tmp_path, "generate", "circle", "--n", 150])
    assert r.exit_code == 0, r.output
    return tmp_path


def test_generate_small_circle(runner, tmp_path):
    r = invoke(runner, ["--out", tmp_path, "generate", "circle", "--n", 4])
    assert r.exit_code == 0
    pts, _ = read_matrix(tmp_path / "cloud.csv")
    np.testing.assert_array_equal(pts, [[1, 0], [0, 1], [-1, 0], [0, -1]])
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["N"] == 4 and manifest["name"] == "circle"
    assert (tmp_path / "features_identity.csv").exists()


def test_generate_json_torus(runner, tmp_path):
    r = invoke(runner, ["--out", tmp_path, "generate", "torus", "--grid", 10, "--format", "json"])
    assert r.exit_code == 0
    pts, _ = read_matrix(tmp_path / "cloud.json")
    assert pts.shape == (100, 3)
    assert (tmp_path / "features_xyy_z.json").exists()


def test_outputs_are_byte_identical(runner, tmp_path):
    for sub in ("a", "b"):
        invoke(runner, ["--out", tmp_path / sub, "generate", "annulus", "--n", 200, "--noise", 0.01])
        invoke(runner, ["--out", tmp_path / sub, "diffusion-map", tmp_path / sub / "cloud.csv",
                        *SMALL])
    for name in ("cloud.csv", "embedding.csv", "eigenvalues.csv", "diffusion_map.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_usage_errors_exit_2(runner, circle_dir):
    cloud = circle_dir / "cloud.csv"
    feats = circle_dir / "features_identity.csv"
    assert invoke(runner, ["idm", cloud, feats, "--tau", 1.5]).exit_code == EXIT_USAGE
    assert invoke(runner, ["diffusion-map", cloud, "--time", -1]).exit_code == EXIT_USAGE
    assert invoke(runner, ["generate", "klein"]).exit_code == EXIT_USAGE
    assert invoke(runner, ["tune"]).exit_code == EXIT_USAGE


def test_data_errors_exit_3(runner, tmp_path, circle_dir):
    assert invoke(runner, ["diffusion-map", tmp_path / "absent.csv"]).exit_code == EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,nan\n")
    assert invoke(runner, ["diffusion-map", bad]).exit_code == EXIT_DATA
    short = tmp_path / "short.csv"
    write_matrix(short, np.ones((3, 1)))
    r = invoke(runner, ["derivative", circle_dir / "cloud.csv", short])
    assert r.exit_code == EXIT_DATA
    assert invoke(runner, ["--config", tmp_path / "none.json", "tune"]).exit_code == EXIT_DATA


def test_numerical_errors_exit_4(runner, tmp_path):
    dup = tmp_path / "dup.csv"
    write_matrix(dup, np.zeros((10, 2)))
    r = invoke(runner, ["diffusion-map", dup, "--k", 5, "--k2", 3, "--modes", 3])
    assert r.exit_code == EXIT_NUMERICAL
    assert "numerical failure" in r.output


def test_tune_writes_scans(runner, circle_dir, tmp_path):
    out = tmp_path / "tune"
    r = invoke(runner, ["--out", out, "tune", circle_dir / "cloud.csv", "--k", 40, "--L", 30,
                        "--point", 0, "--near", "0,1"])
    assert r.exit_code == 0, r.output
    assert (out / "scan_0.csv").exists()
    rows = (out / "selection.csv").read_text().splitlines()
    assert rows[0].startswith("base_index") and len(rows) == 3


def test_derivative_command(runner, circle_dir, tmp_path):
    out = tmp_path / "d"
    r = invoke(runner, ["--out", out, "derivative", circle_dir / "cloud.csv",
                        circle_dir / "features_identity.csv", "--k", 30, "--L", 30])
    assert r.exit_code == 0, r.output
    meta = json.loads((out / "derivatives.meta.json").read_text())
    assert meta["shape"] == [150, 2, 2]
    D, _ = read_matrix(out / "derivatives.csv")
    assert D.shape == (150, 4)


def test_idm_and_eval(runner, circle_dir, tmp_path):
    out = tmp_path / "run"
    r = invoke(runner, ["--out", out, "idm", circle_dir / "cloud.csv",
                        circle_dir / "features_identity.csv", "--tau", 0.3, "--iters", 2,
                        *SMALL, "--base-index", 0, "--count", 10])
    assert r.exit_code == 0, r.output
    for i in range(3):
        assert (out / f"iter_{i}" / "embedding.csv").exists()
    assert len((out / "iter_2" / "neighbors.csv").read_text().splitlines()) == 11
    summary = json.loads((out / "trajectory.json").read_text())
    assert summary["params"]["k"] == 40 and summary["iterations"] == 2

    for which in ("neighbors", "decoder", "fixedpoint", "distances"):
        r = invoke(runner, ["eval", out, "--which", which, "--count", 10])
        assert r.exit_code == 0, (which, r.output)
    rows = (out / "decoder.csv").read_text().splitlines()
    assert len(rows) == 4
    assert (out / "distances.csv").read_text().splitlines()[0].startswith("index,euclidean")


def test_identity_run_reports_change(runner, circle_dir, tmp_path):
    out = tmp_path / "ident"
    r = invoke(runner, ["--out", out, "idm", circle_dir / "cloud.csv",
                        circle_dir / "features_identity.csv", "--tau", 0, "--iters", 2, *SMALL])
    assert r.exit_code == 0, r.output
    report = json.loads((out / "identity_report.json").read_text())
    assert len(report["aligned_eigenfunction_change"]) == 1


def test_eval_missing_layout(runner, tmp_path):
    r = invoke(runner, ["eval", tmp_path, "--which", "neighbors"])
    assert r.exit_code == EXIT_DATA
    assert "iter_0/embedding.csv" in r.output


def test_eval_missing_features(runner, circle_dir, tmp_path):
    out = tmp_path / "run"
    invoke(runner, ["--out", out, "idm", circle_dir / "cloud.csv",
                    circle_dir / "features_identity.csv", "--iters", 1, *SMALL])
    (out / "features.csv").unlink()
    r = invoke(runner, ["eval", out, "--which", "decoder"])
    assert r.exit_code == EXIT_DATA and "features.csv" in r.output


def test_config_fixture_and_override(runner, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fixture": {"name": "circle", "N": 120}, "k": 30, "k2": 8,
                               "modes": 6}))
    out = tmp_path / "dm"
    r = invoke(runner, ["--config", cfg, "--out", out, "diffusion-map", "--modes", 4])
    assert r.exit_code == 0, r.output
    info = json.loads((out / "diffusion_map.json").read_text())
    assert info["k"] == 30 and info["modes"] == 4


def test_nystrom_command(runner, circle_dir, tmp_path):
    new = tmp_path / "new.csv"
    theta = np.array([0.01, 1.0])
    write_matrix(new, np.column_stack([np.cos(theta), np.sin(theta)]))
    out = tmp_path / "ny"
    r = invoke(runner, ["--out", out, "nystrom", circle_dir / "cloud.csv", new, *SMALL])
    assert r.exit_code == 0, r.output
    ext, _ = read_matrix(out / "extended.csv")
    assert ext.shape == (2, 10)
    wrong = tmp_path / "wrong.csv"
    write_matrix(wrong, np.ones((2, 3)))
    assert invoke(runner, ["nystrom", circle_dir / "cloud.csv", wrong, *SMALL]).exit_code == EXIT_DATA


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "idmap", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "generate" in r.stdout
