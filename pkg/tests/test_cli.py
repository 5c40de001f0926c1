import csv
import hashlib
import io
import json
import subprocess
import sys

import numpy as np
import pytest

import cloudrls.cli as cli
from cloudrls.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_SCHEMA, fmt, main, parse_seeds, read_metrics
from cloudrls.errors import ConditioningError

SMALL = ["--agents", "3", "--horizon", "15", "--quiet"]


def _run(tmp_path, *extra, name="out"):
    out = tmp_path / name
    code = main(["run", "--out", str(out), *SMALL, *extra])
    return code, out


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_run_writes_all_files(tmp_path):
    code, out = _run(tmp_path, "--preset", "example1")
    assert code == EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert names == {"metrics.csv", "summary.txt", "scenario.ini", "trajectories.csv", "manifest.json"}
    traj = _rows(out / "trajectories.csv")
    assert len(traj) == 15 * 3 * 2
    assert list(traj[0]) == list(cli.TRAJECTORY_COLUMNS)
    manifest = json.loads((out / "manifest.json").read_text())
    for entry in manifest["files"]:
        blob = (out / entry["file"]).read_bytes()
        assert hashlib.sha256(blob).hexdigest() == entry["sha256"]


def test_rerun_is_byte_identical(tmp_path):
    _, a = _run(tmp_path, "--preset", "example2", "--estimator", "all", "--seeds", "2", name="a")
    _, b = _run(tmp_path, "--preset", "example2", "--estimator", "all", "--seeds", "2", name="b")
    for name in ("metrics.csv", "trajectories.csv", "summary.txt", "scenario.ini"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seventeen_digit_round_trip():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(200) * 10.0 ** rng.integers(-12, 12, 200):
        assert float(fmt(x)) == x
    assert fmt(None) == "" and fmt(float("nan")) == "nan"


def test_all_estimators_one_row_each_per_seed(tmp_path):
    code, out = _run(tmp_path, "--estimator", "all", "--seeds", "2", "--trajectories", "none")
    assert code == EXIT_OK
    rows = _rows(out / "metrics.csv")
    assert len(rows) == 12
    assert [r["estimator"] for r in rows[:6]] == list(cli.ESTIMATORS)
    assert not (out / "trajectories.csv").exists()


def test_all_estimators_in_partial_mode_is_admm_only(tmp_path):
    code, out = _run(tmp_path, "--preset", "example3", "--estimator", "all")
    assert code == EXIT_OK
    assert [r["estimator"] for r in _rows(out / "metrics.csv")] == ["admm-rls"]


def test_seed_count_gives_that_many_rows(tmp_path):
    code, out = _run(tmp_path, "--seeds", "10", "--trajectories", "none")
    rows = _rows(out / "metrics.csv")
    assert code == EXIT_OK and [int(r["seed"]) for r in rows] == list(range(10))


def test_parse_seeds():
    assert parse_seeds("3") == [0, 1, 2]
    assert parse_seeds("4,9") == [4, 9]
    assert parse_seeds("5,") == [5]
    for bad in ("0", "x", "-1,2", ","):
        with pytest.raises(cli.ConfigurationError):
            parse_seeds(bad)


def test_compare_single_file_echoes_row(tmp_path, capsys):
    _, out = _run(tmp_path, "--trajectories", "none")
    capsys.readouterr()
    assert main(["compare", str(out / "metrics.csv"), "--out", str(tmp_path / "cmp")]) == EXIT_OK
    text = capsys.readouterr().out.splitlines()
    assert len(text) == 2 and "admm-rls" in text[1]
    norm = float(_rows(out / "metrics.csv")[0]["rmse_norm"])
    row = _rows(tmp_path / "cmp" / "compare.csv")[0]
    assert float(row["mean_rmse_norm"]) == norm and row["runs"] == "1"


def test_compare_ranks_by_mean(tmp_path, capsys):
    _, out = _run(tmp_path, "--estimator", "s-rls,sw-rls", "--seeds", "3", "--trajectories", "none")
    capsys.readouterr()
    assert main(["compare", str(out / "metrics.csv")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()[1:]
    means = [float(line.split()[2]) for line in lines]
    assert means == sorted(means)


def test_compare_empty_input(tmp_path, capsys):
    empty = tmp_path / "m.csv"
    empty.write_text("estimator,seed,rmse_norm\n")
    assert main(["compare", str(empty)]) == EXIT_SCHEMA
    assert "no data" in capsys.readouterr().err
    assert main(["compare"]) == EXIT_SCHEMA


def test_compare_schema_mismatch_names_column(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("estimator,seed,rmse_norm,snr_min\nadmm-rls,0,0.1,3\n")
    b.write_text("estimator,seed,rmse_norm,snr_max\nadmm-rls,1,0.2,4\n")
    assert main(["compare", str(a), str(b)]) == EXIT_SCHEMA
    assert "'snr_max'" in capsys.readouterr().err
    c = tmp_path / "c.csv"
    c.write_text("estimator,seed\nadmm-rls,0\n")
    with pytest.raises(cli.SchemaError, match="rmse_norm"):
        read_metrics([str(c)])


def test_configuration_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[solver]\nrho = -1\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "bad.ini:2" in capsys.readouterr().err
    assert main(["run", "--estimator", "nope", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["run", "--preset", "example1", "--config", str(bad)]) == EXIT_CONFIG


def test_numerical_failure_exit(tmp_path, monkeypatch, capsys):
    def boom(data, estimator, channel=None):
        raise ConditioningError("gain denominator is singular", agent=2, t=7, k=1)

    monkeypatch.setattr(cli, "run_simulation", boom)
    code, _ = _run(tmp_path)
    assert code == EXIT_NUMERICAL
    assert "agent=2, t=7" in capsys.readouterr().err


def test_environment_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("CLOUDRLS_MAX_ITERS", "1")
    monkeypatch.setenv("CLOUDRLS_SEEDS", "2")
    code, out = _run(tmp_path, "--trajectories", "none")
    rows = _rows(out / "metrics.csv")
    assert code == EXIT_OK and len(rows) == 2
    assert all(float(r["iterations_mean"]) == 1.0 for r in rows)
    # Explicit flags win over the environment.
    code, out = _run(tmp_path, "--max-iters", "30", "--trajectories", "none", name="o2")
    assert float(_rows(out / "metrics.csv")[0]["iterations_mean"]) > 1.0
    monkeypatch.setenv("CLOUDRLS_RHO", "abc")
    assert main(["run", "--out", str(tmp_path / "o3")]) == EXIT_CONFIG


def test_presets_listing(capsys):
    assert main(["presets"]) == EXIT_OK
    assert "example4-S2" in capsys.readouterr().out
    assert main(["presets", "--dump", "example3"]) == EXIT_OK
    assert "[solver]" in capsys.readouterr().out
    assert main(["presets", "--dump", "example9"]) == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cloudrls.cli", "presets"], capture_output=True, text=True)
    assert proc.returncode == 0 and "example1" in proc.stdout
