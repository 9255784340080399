import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from superrad import cli, harness
from superrad.harness import ConfigError, NumericalFailure
from superrad.model import SystemConfig
from superrad.records import TrajectoryRecord


# ------------------------------------------------------------ configuration

def test_config_file_round_trip(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("# comment\nn_atoms = 40   # trailing\ntheta = 3.14159\ntheta_list = 0, 1.5\n"
                 "frozen_disorder = true\nengine = qsdmf\n")
    s = harness.load_config(p)
    assert s["n_atoms"] == 40 and s["theta"] == pytest.approx(3.14159)
    assert s["theta_list"] == [0.0, 1.5] and s["frozen_disorder"] is True
    cfg = harness.system_config(s)
    assert cfg.n_atoms == 40


@pytest.mark.parametrize("text", ["n_atom = 4\n", "n_atoms = 4\nn_atoms = 5\n", "n_atoms 4\n",
                                  "n_atoms = four\n", "frozen_disorder = maybe\n"])
def test_config_file_is_strict(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError):
        harness.load_config(p)


def test_invalid_physics_becomes_a_config_error():
    with pytest.raises(ConfigError):
        harness.system_config({**harness.default_settings(), "gamma": -1.0})
    with pytest.raises(ConfigError):
        harness.canonical_engine("cumulant")


def test_engine_aliases():
    assert harness.canonical_engine("dtwa-elim") == "dtwa-eliminated"
    assert harness.canonical_engine("QJ") == "qj"


def test_worker_count_precedence(monkeypatch):
    monkeypatch.delenv(harness.WORKERS_ENV, raising=False)
    assert harness.worker_count(3) == 3
    monkeypatch.setenv(harness.WORKERS_ENV, "2")
    assert harness.worker_count(3) == 2
    monkeypatch.setenv(harness.WORKERS_ENV, "0")
    with pytest.raises(ConfigError):
        harness.worker_count()


# ------------------------------------------------------------------ output

def test_series_round_trip_is_exact(tmp_path, rng):
    grid = np.linspace(0, 1, 17)
    vals, se = rng.normal(size=17), rng.uniform(size=17)
    man = harness.ExperimentManifest("decay", "qsdmf", {"n_atoms": 3}, 0)
    path = harness.write_series(tmp_path / "s.csv", grid, {"R": (vals, se)}, man)
    back = harness.read_series(path)
    assert np.array_equal(back["t"], grid) and np.array_equal(back["R"], vals) and np.array_equal(back["R_se"], se)
    saved = json.loads(harness.manifest_path(path).read_text())
    assert saved["outputs"]["s.csv"] == harness.file_checksum(path)
    assert saved["code_version"] == harness.__version__


def test_series_rejects_mismatched_columns(tmp_path):
    with pytest.raises(ValueError):
        harness.write_series(tmp_path / "s.csv", np.arange(3.0), {"R": (np.arange(4.0), None)})


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    target = tmp_path / "out.csv"
    target.write_text("old\n")

    def broken(*args):
        raise OSError("disk full")

    monkeypatch.setattr(os, "fsync", broken)
    with pytest.raises(OSError):
        harness._atomic_write(target, b"new\n")
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]


def test_existing_outputs_need_force(tmp_path):
    s = {"n_atoms": 5, "trajectories": 4, "n_samples": 50, "workers": 1, "with_g2": False}
    harness.run_experiment("decay", s, tmp_path)
    with pytest.raises(ConfigError):
        harness.run_experiment("decay", s, tmp_path)
    harness.run_experiment("decay", s, tmp_path, force=True)


# ---------------------------------------------------------------- failures

def test_too_many_failures_raise(monkeypatch):
    cfg = SystemConfig(n_atoms=2, n_samples=5)

    def fake(engine, config, index, *rest):
        return TrajectoryRecord(engine, index, config.grid, 2, 1.0, np.zeros(5), failed=index < 2, message="boom")

    monkeypatch.setattr(harness, "run_one", fake)
    with pytest.raises(NumericalFailure):
        harness.run_ensemble(cfg, "qsdmf", n_trajectories=100, workers=1)
    run = harness.run_ensemble(cfg, "qsdmf", n_trajectories=200, workers=1)
    assert run.n_failed == 2 and len(run.good) == 198


# ---------------------------------------------------------------------- CLI

def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(harness.WORKERS_ENV, raising=False)
    out = str(tmp_path)
    assert cli.main(["decay", "-N", "4", "--trajectories", "3", "--samples", "40", "--workers", "1",
                     "--set", "with_g2=false", "--out", out]) == 0
    assert "R*/gN^2=" in capsys.readouterr().out
    assert cli.main(["decay", "--engine", "nope", "--out", out]) == 2
    assert cli.main(["decay", "--set", "bogus=1", "--out", out]) == 2
    assert cli.main(["nonsense"]) == 2
    assert cli.main(["decay", "--config", str(tmp_path / "missing.cfg")]) == 2

    def failing(*args, **kwargs):
        raise NumericalFailure("2 of 10 trajectories failed")

    monkeypatch.setattr(cli, "run_experiment", failing)
    assert cli.main(["decay"]) == 3


def test_console_script_lists_keys():
    res = subprocess.run([sys.executable, "-m", "superrad.cli", "decay", "--list-keys"],
                         capture_output=True, text=True, check=True)
    assert "n_atoms = " in res.stdout and "master_seed = " in res.stdout


# ------------------------------------------------------------- determinism

@pytest.mark.parametrize("engine", ["dtwa-eliminated", "qsdmf", "qj"])
def test_outputs_are_byte_identical_across_worker_counts(tmp_path, monkeypatch, engine):
    monkeypatch.delenv(harness.WORKERS_ENV, raising=False)
    n = 6 if engine == "qj" else 20
    blobs = []
    for w in (1, 2, 3):
        d = tmp_path / f"w{w}"
        res = harness.run_experiment("decay", {"engine": engine, "n_atoms": n, "theta": math.pi, "trajectories": 7,
                                               "n_samples": 60, "workers": w}, d)
        blobs.append(res.outputs[0].read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]
