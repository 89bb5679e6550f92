import json

import numpy as np
import pytest

from pcit.cli import main, read_embedded_config
from pcit.dataset import Dataset


@pytest.fixture
def csv_path(tmp_path):
    rng = np.random.default_rng(0)
    z = rng.random((120, 3))
    data = Dataset(z[:, 0] + rng.normal(size=120), z[:, 1] + rng.normal(size=120), z,
                   z_names=("z1", "z2", "z3"))
    path = tmp_path / "data.csv"
    data.to_csv(path)
    return path


def run(argv):
    return main([str(a) for a in argv])


def test_test_command_is_reproducible(csv_path, tmp_path):
    argv = ["test", "--input", csv_path, "--x", "x", "--y", "y", "--z", "z1,z2,z3",
            "--method", "pc", "--q", "1", "--alpha", "0.05", "--seed", "7"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(argv + ["--output", a]) == 0
    assert run(argv + ["--output", b]) == 0
    assert a.read_bytes() == b.read_bytes()
    art = json.loads(a.read_text())
    assert art["config"]["m"] == 11 and art["config"]["seed"] == 7
    assert art["results"][0]["config"]["m"] == 11


def test_several_q_values_reported_separately(csv_path, tmp_path):
    out = tmp_path / "q.json"
    assert run(["test", "--input", csv_path, "--x", "x", "--y", "y", "--z", "z1,z2,z3",
                "--q", "1", "3", "--method", "pc,gcm,npn", "--output", out]) == 0
    art = json.loads(out.read_text())
    assert art["multiplicity"] == "no multiplicity correction applied"
    assert [(r["method"], r["q"]) for r in art["results"]][:2] == [("pc", 1), ("pc", 3)]
    assert [r["method"] for r in art["results"]][2:] == ["gcm", "npn"]


def test_q_zero_is_usage_error(csv_path, capsys):
    assert _exit_code(["test", "--input", csv_path, "--x", "x", "--y", "y",
                       "--method", "pc", "--q", "0"]) == 2
    assert "q" in capsys.readouterr().err


def _exit_code(argv):
    try:
        return run(argv)
    except SystemExit as exc:
        return exc.code


def test_usage_errors(csv_path, tmp_path):
    base = ["test", "--input", csv_path, "--x", "x", "--y", "y"]
    assert _exit_code(base + ["--alpha", "1.5"]) == 2
    assert _exit_code(base + ["--tau-min", "0.6", "--tau-max", "0.4"]) == 2
    assert _exit_code(base + ["--method", "foo"]) == 2
    assert _exit_code(["test", "--input", tmp_path / "missing.csv", "--x", "x", "--y", "y"]) == 2
    assert _exit_code(base + ["--output", tmp_path / "nodir" / "a.json"]) == 2


def test_data_errors(csv_path, tmp_path, capsys):
    assert run(["test", "--input", csv_path, "--x", "x", "--y", "nope"]) == 1
    assert "nope" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\nnan,3\n")
    assert run(["test", "--input", bad, "--x", "x", "--y", "y"]) == 1


def test_rerun_reproduces_every_artifact(csv_path, tmp_path):
    runs = {
        "test.json": ["test", "--input", csv_path, "--x", "x", "--y", "y", "--z", "z1,z2",
                      "--method", "pc,npn", "--q", "1,2", "--basis", "polynomial",
                      "--degree", "2", "--seed", "3"],
        "cdf.json": ["fit-cdf", "--input", csv_path, "--x", "x", "--z", "z1", "--m", "6"],
        "sim.csv": ["simulate", "--dgp", "A1", "--d", "2", "--n", "50", "--seed", "4"],
        "bench.json": ["benchmark", "--dgp", "LOCAL", "--n", "60", "--replicates", "3",
                       "--beta", "2", "--gamma0-sq", "10", "--tests", "pc:q=1:basis=poly2,gcm",
                       "--seed", "9"],
    }
    for name, argv in runs.items():
        first = tmp_path / name
        again = tmp_path / ("re_" + name)
        assert run(argv + ["--output", first]) == 0
        assert run(["rerun", "--config", first, "--output", again]) == 0
        assert first.read_bytes() == again.read_bytes(), name
        assert read_embedded_config(first)["command"] == argv[0]


def test_simulated_csv_feeds_test_command(tmp_path):
    sim = tmp_path / "sim.csv"
    assert run(["simulate", "--dgp", "H2", "--d", "2", "--n", "80", "--output", sim]) == 0
    assert run(["test", "--input", sim, "--x", "x", "--y", "y", "--z", "z1,z2",
                "--penalty", "none", "--output", tmp_path / "t.json"]) == 0


def test_benchmark_report_counts(tmp_path):
    out = tmp_path / "b.json"
    assert run(["benchmark", "--dgp", "H2", "--d", "3", "--n", "50", "--replicates", "5",
                "--tests", "pc:q=1,gcm", "--seed", "11", "--output", out]) == 0
    report = json.loads(out.read_text())
    assert len(report["p_values"]["pc:q=1"]) == 5
    assert len(report["p_values"]["gcm"]) == 5
    assert report["config"]["seed"] == 11


def test_stdout_when_no_output(csv_path, capsys):
    assert run(["simulate", "--dgp", "H3", "--n", "5"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("# {") and "x,y,z1" in text
