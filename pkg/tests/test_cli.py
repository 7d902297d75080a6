"""Tests for the command line interface and its exit codes."""

import json
import os

import pytest
from click.testing import CliRunner

import riskcert.cli as cli_mod
from riskcert.cli import cli, main
from riskcert.errors import SolverDidNotConverge

CONFIG_TEXT = """\
dataset.synth_counts = 40, 24
bounds = subgroups_kl
alpha.grid = 0.5
repetitions = 1
seed = 11
train.epochs = 1
train.batch_size = 8
prior.learning_rates = 0.05
prior.epochs = 1
arch.hidden = 4
"""


@pytest.fixture()
def runner():
    return CliRunner()


def test_synth_writes_csv(runner, tmp_path):
    out = str(tmp_path / "blob.csv")
    result = runner.invoke(cli, ["synth", "30,10", "-o", out, "--seed", "1"])
    assert result.exit_code == 0, result.output
    with open(out, encoding="utf-8") as handle:
        header = handle.readline().strip().split(",")
        rows = handle.readlines()
    assert header[-1] == "label"
    assert len(rows) == 40


def test_synth_rejects_bad_counts(runner, tmp_path):
    result = runner.invoke(cli, ["synth", "30;10", "-o",
                                 str(tmp_path / "x.csv")])
    assert result.exit_code != 0


def test_run_and_bound_round_trip(runner, tmp_path):
    config_path = tmp_path / "exp.cfg"
    config_path.write_text(CONFIG_TEXT)
    outdir = str(tmp_path / "out")
    result = runner.invoke(cli, ["run", str(config_path), "-o", outdir,
                                 "--checkpoints"])
    assert result.exit_code == 0, result.output
    assert os.path.exists(os.path.join(outdir, "report.json"))
    assert os.path.exists(os.path.join(outdir, "plotdata.csv"))
    checkpoints = os.listdir(os.path.join(outdir, "checkpoints"))
    assert len(checkpoints) == 1

    blob = str(tmp_path / "data.csv")
    synth_result = runner.invoke(cli, ["synth", "30,12", "-o", blob,
                                       "--seed", "2"])
    assert synth_result.exit_code == 0
    checkpoint = os.path.join(outdir, "checkpoints", checkpoints[0])
    bound_result = runner.invoke(cli, [
        "bound", checkpoint, blob, "--alpha", "0.5",
        "--bound-kind", "subgroups_kl"])
    assert bound_result.exit_code == 0, bound_result.output
    payload = json.loads(bound_result.output)
    assert payload["kind"] == "subgroups_kl"
    assert 0.0 <= payload["empirical_risk"] <= 1.0


def test_bound_rejects_feature_mismatch(runner, tmp_path):
    config_path = tmp_path / "exp.cfg"
    config_path.write_text(CONFIG_TEXT)
    outdir = str(tmp_path / "out")
    assert runner.invoke(cli, ["run", str(config_path), "-o", outdir,
                               "--checkpoints"]).exit_code == 0
    checkpoints = os.listdir(os.path.join(outdir, "checkpoints"))
    wide = str(tmp_path / "wide.csv")
    assert runner.invoke(cli, ["synth", "20,8", "-o", wide, "--dx", "5"
                               ]).exit_code == 0
    result = runner.invoke(cli, [
        "bound", os.path.join(outdir, "checkpoints", checkpoints[0]), wide,
        "--alpha", "0.5", "--bound-kind", "subgroups_kl"])
    assert result.exit_code != 0


def test_oracle_check_passes(runner):
    result = runner.invoke(cli, ["oracle-check", "--instances", "6",
                                 "--resolution", "1e-3"])
    assert result.exit_code == 0, result.output
    assert "6/6" in result.output


def test_main_success_exit_code(monkeypatch, tmp_path, capsys):
    out = str(tmp_path / "b.csv")
    monkeypatch.setattr("sys.argv", ["riskcert", "synth", "12,6", "-o", out])
    assert main() == 0
    capsys.readouterr()


def test_main_missing_file_is_exit_1(monkeypatch, capsys):
    monkeypatch.setattr(
        "sys.argv", ["riskcert", "run", "/nonexistent.cfg", "-o", "/tmp/x"])
    assert main() == 1
    capsys.readouterr()


def test_main_usage_error_is_exit_1(monkeypatch, capsys):
    monkeypatch.setattr("sys.argv", ["riskcert", "no-such-command"])
    assert main() == 1
    capsys.readouterr()


def test_main_runtime_failure_is_exit_2(monkeypatch, tmp_path, capsys):
    config_path = tmp_path / "exp.cfg"
    config_path.write_text(CONFIG_TEXT)

    def explode(*args, **kwargs):
        raise SolverDidNotConverge("no convergence", iterations=10, gap=1.0)

    monkeypatch.setattr(cli_mod, "run_experiment", explode)
    monkeypatch.setattr("sys.argv", ["riskcert", "run", str(config_path),
                                     "-o", str(tmp_path / "out")])
    assert main() == 2
    capsys.readouterr()


def test_main_unexpected_exception_is_exit_2(monkeypatch, tmp_path, capsys):
    config_path = tmp_path / "exp.cfg"
    config_path.write_text(CONFIG_TEXT)

    def explode(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli_mod, "run_experiment", explode)
    monkeypatch.setattr("sys.argv", ["riskcert", "run", str(config_path),
                                     "-o", str(tmp_path / "out")])
    assert main() == 2
    capsys.readouterr()
