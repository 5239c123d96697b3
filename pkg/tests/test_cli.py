"""Command-line interface: config validation, outputs, exit codes."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from gvidgp.cli import (
    CORRUPT_GRAD_ENV,
    EXIT_CONFIG,
    EXIT_GRADCHECK,
    EXIT_OK,
    main,
)
from gvidgp.data import make_sine_table, write_csv

ASSETS = Path(__file__).resolve().parents[1] / "src" / "gvidgp" / "assets"


@pytest.fixture()
def toy_csv(tmp_path):
    table = make_sine_table(n=60, seed=3)
    path = tmp_path / "toy.csv"
    write_csv(path, table.values, header=table.header)
    return path


def write_config(tmp_path, name="config.json", **overrides):
    cfg = {
        "dataset": {"path": "", "target_columns": [-1], "has_header": True},
        "split": {"test_fraction": 0.1, "seed": 0},
        "model": {"layers": 1, "num_inducing": 10, "whiten": True},
        "loss": {"kind": "nll"},
        "quantifiers": {"kind": "kld"},
        "train": {"learning_rate": 0.01, "iterations": 60, "seed": 0, "n_samples": 5},
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestCmdTrain:
    def test_minimal_run_writes_outputs(self, tmp_path, toy_csv):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, dataset={"path": str(toy_csv), "target_columns": [-1], "has_header": True})
        assert main(["train", str(cfg), "--output-dir", str(out)]) == EXIT_OK
        assert (out / "metrics.json").exists()
        assert (out / "trace.csv").exists()
        assert (out / "model.npz").exists()
        record = json.loads((out / "metrics.json").read_text())
        assert np.isfinite(record["metrics"]["rmse"])

    def test_alpha_constraint_cited(self, tmp_path, toy_csv, capsys):
        cfg = write_config(
            tmp_path,
            dataset={"path": str(toy_csv), "target_columns": [-1], "has_header": True},
            quantifiers={"kind": "renyi", "alpha": 1.5},
        )
        assert main(["train", str(cfg), "--output-dir", str(tmp_path / "o")]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "(0, 1)" in err and "quantifiers" in err

    def test_unknown_key_rejected(self, tmp_path, toy_csv, capsys):
        cfg = write_config(
            tmp_path,
            dataset={"path": str(toy_csv), "target_columns": [-1], "has_header": True},
            model={"layers": 1, "num_inducing": 10, "whittne": True},
        )
        assert main(["train", str(cfg)]) == EXIT_CONFIG
        assert "whittne" in capsys.readouterr().err

    def test_missing_data_file_is_config_error(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path, dataset={"path": str(tmp_path / "nope.csv"), "target_columns": [-1], "has_header": True}
        )
        assert main(["train", str(cfg)]) == EXIT_CONFIG
        assert "dataset.path" in capsys.readouterr().err

    def test_repeated_run_identical_metrics(self, tmp_path, toy_csv):
        cfg = write_config(
            tmp_path, dataset={"path": str(toy_csv), "target_columns": [-1], "has_header": True}
        )
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", str(cfg), "--output-dir", str(out1)]) == EXIT_OK
        assert main(["train", str(cfg), "--output-dir", str(out2)]) == EXIT_OK
        assert (out1 / "metrics.json").read_bytes() == (out2 / "metrics.json").read_bytes()


class TestCmdBenchmark:
    def test_three_splits_rows_and_aggregate(self, tmp_path, toy_csv):
        out = tmp_path / "bench"
        cfg = write_config(
            tmp_path,
            dataset={"path": str(toy_csv), "target_columns": [-1], "has_header": True},
            n_splits=3,
        )
        assert main(["benchmark", str(cfg), "--output-dir", str(out)]) == EXIT_OK
        split_lines = (out / "benchmark_splits.csv").read_text().strip().splitlines()
        assert len(split_lines) == 1 + 3  # header + one row per split
        agg_lines = (out / "benchmark_aggregate.csv").read_text().strip().splitlines()
        assert len(agg_lines) == 1 + 1

        rmses = [float(ln.split(",")[5]) for ln in split_lines[1:]]
        agg_mean = float(agg_lines[1].split(",")[3])
        assert abs(agg_mean - np.mean(rmses)) < 1e-12

    def test_contamination_preset_pairs_methods(self, tmp_path):
        out = tmp_path / "bench"
        cfg_raw = json.loads((ASSETS / "contamination.json").read_text())
        cfg_raw["n_splits"] = 1
        cfg_raw["train"]["iterations"] = 50
        cfg = tmp_path / "contamination.json"
        cfg.write_text(json.dumps(cfg_raw))
        assert main(["benchmark", str(cfg), "--output-dir", str(out)]) == EXIT_OK
        lines = (out / "benchmark_splits.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 2  # nll row and gamma row for the single split
        losses = {ln.split(",")[2] for ln in lines[1:]}
        assert losses == {"nll", "gamma"}


class TestCmdGradcheck:
    def test_reference_passes(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("max rel error") == 9
        assert "passed" in out

    def test_corrupted_gradient_fails(self, capsys, monkeypatch):
        monkeypatch.setenv(CORRUPT_GRAD_ENV, "log_noise_variance")
        assert main(["gradcheck"]) == EXIT_GRADCHECK
        assert "FAILED" in capsys.readouterr().out


class TestCmdPredict:
    def test_predict_from_checkpoint(self, tmp_path, toy_csv):
        out = tmp_path / "out"
        cfg = write_config(
            tmp_path, dataset={"path": str(toy_csv), "target_columns": [-1], "has_header": True}
        )
        assert main(["train", str(cfg), "--output-dir", str(out)]) == EXIT_OK
        assert (
            main(["predict", str(cfg), str(out / "model.npz"), "--output-dir", str(out)])
            == EXIT_OK
        )
        lines = (out / "predictions.csv").read_text().strip().splitlines()
        assert lines[0] == "mean_0,var_0"
        assert len(lines) == 1 + 6  # 10% test split of 60 rows


class TestOutputDirEnv:
    def test_env_var_default(self, tmp_path, toy_csv, monkeypatch):
        target = tmp_path / "envout"
        monkeypatch.setenv("GVIDGP_OUTPUT_DIR", str(target))
        cfg = write_config(
            tmp_path, dataset={"path": str(toy_csv), "target_columns": [-1], "has_header": True}
        )
        assert main(["train", str(cfg)]) == EXIT_OK
        assert (target / "metrics.json").exists()
