import json
import subprocess
import sys

import pytest

from patchmomentum.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from patchmomentum.distribution import ExperimentConfig, read_dataset_csv, sample_dataset

SMALL = ["--d", "8", "--N", "200", "--n_test", "100", "--T", "10", "--P", "3", "--m", "3"]


def test_check_identities(capsys):
    assert main(["check", "--suite", "identities"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["identities"]["sandwich_min_ratio"] >= 0.1


def test_check_tpm_report(tmp_path, capsys):
    assert main(["check", "--suite", "tpm", "--instances", "10", "--report", str(tmp_path / "r.json")]) == EXIT_OK
    assert json.loads((tmp_path / "r.json").read_text())["tpm"]["total_failures"] == 0


def test_check_specs(tmp_path, capsys):
    (tmp_path / "specs.json").write_text(json.dumps([{"z0": 0.1, "upsilon": 1.0}]))
    assert main(["check", "--specs", str(tmp_path / "specs.json")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["specs"][0]["simulated"] == 12


def test_run_T_zero(tmp_path, capsys):
    assert main(["run", "--T", "0", "--N", "100", "--n_test", "50", "--out-dir", str(tmp_path)]) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["arms"]["gd"]["iterations"] == 0


def test_run_files_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", *SMALL, "--out-dir", str(a)]) == EXIT_OK
    assert main(["run", *SMALL, "--out-dir", str(b)]) == EXIT_OK
    for name in ("gd_trace.csv", "gdm_trace.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "summary.json").exists()


def test_run_single_optimizer(tmp_path, capsys):
    assert main(["run", *SMALL, "--optimizer", "gd", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "gd_trace.csv").exists() and not (tmp_path / "gdm_trace.csv").exists()


def test_config_file_and_override(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"d": 6, "N": 50, "n_test": 20, "T": 2, "seed": 9}))
    assert main(["run", "--config", str(tmp_path / "cfg.json"), "--T", "3", "--out-dir", str(tmp_path)]) == EXIT_OK
    cfg = json.loads((tmp_path / "summary.json").read_text())["config"]
    assert (cfg["d"], cfg["T"], cfg["seed"]) == (6, 3, 9)


def test_unknown_flag(capsys):
    assert main(["run", "--bogus", "1"]) == EXIT_USAGE
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "usage"


def test_invalid_config(tmp_path, capsys):
    assert main(["run", "--beta", "-1", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert json.loads(capsys.readouterr().err)["error"] == "invalid-config"


def test_unknown_key_in_config_file(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"depth": 3}))
    assert main(["run", "--config", str(tmp_path / "cfg.json")]) == EXIT_USAGE


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == EXIT_FAILED
    assert "error" in json.loads(capsys.readouterr().err)


def test_gen_data(tmp_path, capsys):
    assert main(["gen-data", "--d", "5", "--N", "30", "--n_test", "10", "--out-dir", str(tmp_path)]) == EXIT_OK
    cfg = ExperimentConfig(d=5, N=30, n_test=10)
    ds = read_dataset_csv(tmp_path / "train.csv", cfg.alpha, cfg.beta)
    assert ds.equals(sample_dataset(cfg))
    assert len(read_dataset_csv(tmp_path / "test.csv", cfg.alpha, cfg.beta)) == 10


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "patchmomentum", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-data" in out.stdout
