import csv
import json

import numpy as np
import pytest
import yaml

from qdbench import load_config, load_dataset, run_experiment, validate_config
from qdbench.cli import main
from qdbench.runner import NONDETERMINISTIC_COLUMNS, config_hash

SMOKE = {
    "experiment_id": "smoke",
    "seed": 11,
    "families": ["cnn"],
    "budgets": [1.0],
    "normalizations": ["min_max"],
    "folds": 2,
    "data": {"records": 20, "patches_per_record": 10, "grid_size": 60, "test_count": 40},
    "train": {"cnn": {"max_epochs": 5, "patience": 2, "batch_size": 64}},
}


def _write_config(path, **overrides):
    raw = json.loads(json.dumps(SMOKE))
    raw.update(overrides)
    path.write_text(yaml.safe_dump(raw))
    return raw


def _read_rows(csv_path):
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    cfg_path = root / "cfg.yaml"
    _write_config(cfg_path, output_root=str(root / "runs"))
    assert main(["run", "--config", str(cfg_path)]) == 0
    return cfg_path, root / "runs" / "smoke"


def test_smoke_layout_complete(smoke_run):
    _, run_dir = smoke_run
    cell = run_dir / "cells" / "cnn_100_min_max"
    expected = [
        run_dir / "provenance.json",
        run_dir / "config.resolved.yaml",
        run_dir / "failures.json",
        cell / "cell.json",
        cell / "aggregate" / "metrics.csv",
        cell / "aggregate" / "confusion.csv",
        cell / "aggregate" / "calibration.csv",
        run_dir / "report" / "epochs_summary.csv",
        run_dir / "report" / "epochs_min_max.png",
        run_dir / "report" / "mse_min_max.png",
    ]
    for fold in (0, 1):
        for name in ("checkpoint.bin", "curves.csv", "metrics.json"):
            expected.append(cell / "folds" / f"fold_{fold}" / name)
    for path in expected:
        assert path.is_file(), path
    assert json.loads((run_dir / "failures.json").read_text()) == []


def test_smoke_provenance_valid(smoke_run):
    cfg_path, run_dir = smoke_run
    record = json.loads((run_dir / "provenance.json").read_text())
    for key in (
        "experiment_id", "config_hash", "seed", "created_utc",
        "python", "platform", "packages", "qdbench_version",
    ):
        assert key in record, key
    assert record["experiment_id"] == "smoke"
    assert record["config_hash"] == config_hash(load_config(cfg_path))
    resolved = validate_config((run_dir / "config.resolved.yaml").read_text())
    assert config_hash(resolved) == record["config_hash"]
    assert config_hash(validate_config(record["config"])) == record["config_hash"]


def test_smoke_metrics_schema(smoke_run):
    _, run_dir = smoke_run
    rows = _read_rows(run_dir / "cells" / "cnn_100_min_max" / "aggregate" / "metrics.csv")
    assert [r["fold"] for r in rows] == ["0", "1"]
    assert list(rows[0]) == [
        "fold", "budget", "normalization", "family", "mse_score", "accuracy",
        "best_epoch", "epochs_run", "wall_clock_s", "peak_memory_bytes", "params",
    ]
    for row in rows:
        assert row["family"] == "cnn"
        assert row["normalization"] == "min_max"
        assert float(row["budget"]) == 1.0
        assert 0.0 <= float(row["mse_score"]) <= 1.0
        assert 0.0 <= float(row["accuracy"]) <= 1.0
        assert int(row["params"]) == 60_549
        assert int(row["best_epoch"]) <= int(row["epochs_run"]) <= 5
    conf_rows = _read_rows(
        run_dir / "cells" / "cnn_100_min_max" / "aggregate" / "confusion.csv"
    )
    assert len(conf_rows) == 2 * 25
    per_fold = sum(int(r["count"]) for r in conf_rows if r["fold"] == "0")
    assert per_fold == 40  # test-set size
    cal_rows = _read_rows(
        run_dir / "cells" / "cnn_100_min_max" / "aggregate" / "calibration.csv"
    )
    assert sum(int(r["count"]) for r in cal_rows if r["fold"] == "0") == 5 * 40


def test_smoke_curves_schema(smoke_run):
    _, run_dir = smoke_run
    rows = _read_rows(
        run_dir / "cells" / "cnn_100_min_max" / "folds" / "fold_0" / "curves.csv"
    )
    assert list(rows[0]) == ["epoch", "lr", "train_loss", "val_loss"]
    assert [int(r["epoch"]) for r in rows] == list(range(1, len(rows) + 1))
    for row in rows:
        assert float(row["lr"]) == 0.0005  # constant schedule


def test_rerun_refused_then_resumed(smoke_run):
    cfg_path, run_dir = smoke_run
    ckpt = run_dir / "cells" / "cnn_100_min_max" / "folds" / "fold_0" / "checkpoint.bin"
    before = ckpt.stat().st_mtime_ns
    assert main(["run", "--config", str(cfg_path)]) == 3
    assert main(["run", "--config", str(cfg_path), "--resume"]) == 0
    assert ckpt.stat().st_mtime_ns == before  # completed cell was skipped


def test_evaluate_checkpoint_cli(smoke_run, tmp_path, capsys):
    _, run_dir = smoke_run
    data_dir = tmp_path / "eval_data"
    assert main([
        "synth", "--out", str(data_dir), "--records", "3",
        "--patches-per-record", "8", "--grid-size", "60", "--seed", "50",
    ]) == 0
    capsys.readouterr()
    ckpt = run_dir / "cells" / "cnn_100_min_max" / "folds" / "fold_0" / "checkpoint.bin"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data_dir)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload) == {"mse_score", "accuracy", "n_samples", "confusion", "calibration"}
    assert payload["n_samples"] == 24
    assert np.asarray(payload["confusion"]).sum() == 24


def test_report_rerenders_from_csv_alone(smoke_run, tmp_path):
    _, run_dir = smoke_run
    first = (run_dir / "report" / "epochs_min_max.png").read_bytes()
    import shutil

    clone = tmp_path / "clone"
    shutil.copytree(run_dir, clone)
    for ckpt in clone.rglob("checkpoint.bin"):
        ckpt.unlink()
    assert main(["report", "--run", str(clone)]) == 0
    assert (clone / "report" / "epochs_min_max.png").read_bytes() == first
    summary = _read_rows(clone / "report" / "epochs_summary.csv")
    assert list(summary[0]) == [
        "family", "normalization", "budget", "min", "q1", "median", "q3", "max",
    ]
    assert summary[0]["family"] == "cnn"


def test_synth_cli_round_trip(tmp_path, capsys):
    out = tmp_path / "ds"
    assert main([
        "synth", "--out", str(out), "--records", "2", "--kind", "both",
        "--grid-size", "60", "--patches-per-record", "4",
    ]) == 0
    items = load_dataset(out)
    kinds = [type(item).__name__ for item in items]
    assert kinds.count("CSDRecord") == 2
    assert kinds.count("Patch") == 8


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment_id: x\nbudgets: [0.3]\n")
    assert main(["validate", "--config", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "families" in err and "budgets" in err
    assert main(["run", "--config", str(bad)]) == 1


def test_missing_data_path_is_config_error(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    _write_config(
        cfg,
        output_root=str(tmp_path / "runs"),
        data={"source": "path", "path": str(tmp_path / "nowhere")},
    )
    assert main(["run", "--config", str(cfg)]) == 1


def test_failed_cell_isolated(tmp_path, monkeypatch):
    import qdbench.runner as runner_mod

    real = runner_mod.train_one_fold

    def selective(model_seed, fold_data, config):
        if config.family == "mdn":
            raise RuntimeError("synthetic fault injected for isolation test")
        return real(model_seed, fold_data, config)

    monkeypatch.setattr(runner_mod, "train_one_fold", selective)
    cfg = validate_config(
        {
            **json.loads(json.dumps(SMOKE)),
            "experiment_id": "faulty",
            "families": ["cnn", "mdn"],
            "output_root": str(tmp_path / "runs"),
        }
    )
    run_dir, failures = run_experiment(cfg)
    assert [f["cell"] for f in failures] == ["mdn_100_min_max"]
    assert "synthetic fault" in failures[0]["error"]
    recorded = json.loads((run_dir / "failures.json").read_text())
    assert [f["cell"] for f in recorded] == ["mdn_100_min_max"]
    assert (run_dir / "cells" / "cnn_100_min_max" / "cell.json").is_file()
    assert not (run_dir / "cells" / "mdn_100_min_max" / "cell.json").exists()
    # The report renders the surviving cell and names the absent one.
    listed = (run_dir / "report" / "missing_cells.txt").read_text().split()
    assert listed == ["mdn_100_min_max"]
    assert (run_dir / "report" / "mse_min_max.png").is_file()


def test_overwrite_replaces_run(tmp_path):
    cfg_path = tmp_path / "cfg.yaml"
    raw = json.loads(json.dumps(SMOKE))
    raw["data"]["records"] = 12
    raw["data"]["test_count"] = 20
    raw["train"]["cnn"]["max_epochs"] = 2
    raw["train"]["cnn"]["patience"] = 1
    raw["output_root"] = str(tmp_path / "runs")
    cfg_path.write_text(yaml.safe_dump(raw))
    assert main(["run", "--config", str(cfg_path)]) == 0
    marker = tmp_path / "runs" / "smoke" / "provenance.json"
    before = marker.stat().st_mtime_ns
    assert main(["run", "--config", str(cfg_path), "--overwrite"]) == 0
    assert marker.stat().st_mtime_ns != before


def test_parallel_matches_serial(tmp_path):
    raw = json.loads(json.dumps(SMOKE))
    raw["normalizations"] = ["min_max", "z_score"]
    raw["data"]["records"] = 12
    raw["data"]["test_count"] = 20
    raw["train"]["cnn"]["max_epochs"] = 2
    raw["train"]["cnn"]["patience"] = 1

    serial_cfg = validate_config({**raw, "output_root": str(tmp_path / "a")})
    parallel_cfg = validate_config({**raw, "output_root": str(tmp_path / "b")})
    dir_a, fail_a = run_experiment(serial_cfg)
    dir_b, fail_b = run_experiment(parallel_cfg, workers=2)
    assert fail_a == [] and fail_b == []
    for cell in ("cnn_100_min_max", "cnn_100_z_score"):
        rows_a = _read_rows(dir_a / "cells" / cell / "aggregate" / "metrics.csv")
        rows_b = _read_rows(dir_b / "cells" / cell / "aggregate" / "metrics.csv")
        for ra, rb in zip(rows_a, rows_b):
            for column in ra:
                if column in NONDETERMINISTIC_COLUMNS:
                    continue
                assert ra[column] == rb[column], (cell, column)
