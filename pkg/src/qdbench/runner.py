"""Experiment orchestration: sweep cells, fold artifacts, provenance, resume.

A run directory is laid out as::

    <output_root>/<experiment_id>/
        provenance.json            environment + config hash, written first
        config.resolved.yaml       the config with all defaults filled
        failures.json              one entry per failed cell (empty when clean)
        cells/<family>_<pct>_<norm>/
            cell.json              completion marker (resume checkpoint)
            folds/fold_<k>/{checkpoint.bin, curves.csv, metrics.json}
            aggregate/{metrics.csv, confusion.csv, calibration.csv}
        report/                    summary CSV + figures

Every file is written atomically (temp file + rename) so an interrupted run
never leaves a truncated artifact, and a failed cell never poisons its
neighbours: the failure is recorded and the sweep continues.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
import shutil
import subprocess
import sys
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from multiprocessing import get_context
from pathlib import Path

import numpy as np
import scipy
import torch
import yaml

from . import __version__ as _pkg_version
from .config import DataConfig, ExperimentConfig, resolved_train_config, validate_config
from .data import (
    NormalizationScheme,
    Patch,
    extract_patches,
    fractional_label,
    load_dataset,
    make_splits,
    normalize_batch,
    unify_size,
)
from .errors import ConfigError, DataError
from .metrics import MetricsReport, evaluate
from .models import build_model, forward, load_checkpoint, model_spec, save_checkpoint
from .synth import default_params, generate_csd
from .training import (
    ADAMW_BETAS,
    ADAMW_EPS,
    FoldData,
    derive_seed,
    fold_plan,
    train_one_fold,
)

logger = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "fold",
    "budget",
    "normalization",
    "family",
    "mse_score",
    "accuracy",
    "best_epoch",
    "epochs_run",
    "wall_clock_s",
    "peak_memory_bytes",
    "params",
)

# Columns that measure the machine, not the model; excluded from
# reproducibility comparisons.
NONDETERMINISTIC_COLUMNS = ("wall_clock_s", "peak_memory_bytes")


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------


def write_atomic_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_atomic_text(path: Path, text: str) -> None:
    write_atomic_bytes(path, text.encode("utf-8"))


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_value(v) for v in row])
    return buf.getvalue()


def _format_value(value):
    # full-precision float round-trip; everything else verbatim
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


def prepare_pool(data_cfg: DataConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw (unnormalized) patch pool: (N, 30, 30) pixels and (N, 5) labels.

    For the synthetic source, record i draws its generator parameters from a
    seed hashed from (seed, i), so the pool is a pure function of the config.
    """
    xs, ys = [], []
    if data_cfg.source == "path":
        for item in load_dataset(data_cfg.path):
            if isinstance(item, Patch):
                xs.append(item.pixels)
                ys.append(item.label.p)
            else:  # record: take its center crop, label from the state map
                xs.append(unify_size(item.signal))
                ys.append(fractional_label(unify_size(item.state_map)).p)
    else:
        for i in range(data_cfg.records):
            params = default_params(
                derive_seed(seed, f"record-{i}"), grid_size=data_cfg.grid_size
            )
            record = generate_csd(params, record_id=f"rec{i:05d}")
            for patch in extract_patches(
                record, data_cfg.patches_per_record, seed=derive_seed(seed, f"patches-{i}")
            ):
                xs.append(patch.pixels)
                ys.append(patch.label.p)
    if not xs:
        raise DataError("data source produced an empty patch pool")
    return np.stack(xs), np.stack(ys)


def cell_name(family: str, budget: float, normalization: NormalizationScheme) -> str:
    return f"{family}_{int(round(budget * 100))}_{normalization.value}"


# ---------------------------------------------------------------------------
# Cell execution
# ---------------------------------------------------------------------------


def _run_cell(
    cfg: ExperimentConfig,
    family: str,
    budget: float,
    normalization: NormalizationScheme,
    run_dir: Path,
    pool: tuple[np.ndarray, np.ndarray] | None = None,
) -> None:
    name = cell_name(family, budget, normalization)
    cell_dir = run_dir / "cells" / name
    marker = cell_dir / "cell.json"
    if marker.is_file() and json.loads(marker.read_text()).get("status") == "complete":
        logger.info("cell %s already complete, skipping", name)
        return

    if pool is None:
        pool = prepare_pool(cfg.data, derive_seed(cfg.seed, "data"))
    raw_x, all_y = pool

    # Test ids are budget-independent; pool prefixes nest across budgets.
    split = make_splits(
        len(raw_x), cfg.data.test_count, budget, seed=derive_seed(cfg.seed, "split")
    )
    norm_x = normalize_batch(raw_x, normalization)
    test_x, test_y = norm_x[split.test_ids], all_y[split.test_ids]
    pool_x, pool_y = norm_x[split.pool_ids], all_y[split.pool_ids]

    train_cfg = resolved_train_config(
        cfg, family, budget, normalization, seed=derive_seed(cfg.seed, name)
    )
    train_cfg.validate()

    metrics_rows = []
    confusion_rows = []
    calibration_rows = []

    for plan in fold_plan(pool_y, train_cfg):
        fold_dir = cell_dir / "folds" / f"fold_{plan.fold_index}"
        fold_data = FoldData(
            train_x=pool_x[plan.train_idx],
            train_y=pool_y[plan.train_idx],
            val_x=pool_x[plan.val_idx],
            val_y=pool_y[plan.val_idx],
        )
        result = train_one_fold(plan.model_seed, fold_data, train_cfg)
        result.fold_index = plan.fold_index

        model = build_model(model_spec(family, train_cfg.dropout), plan.model_seed)
        model.load_state_dict(result.best_state)
        model.eval()
        report = evaluate(forward(model, test_x), test_y, bins=cfg.calibration_bins)

        _write_fold_artifacts(fold_dir, result, report, model, train_cfg, plan.model_seed)
        result.checkpoint_path = str(fold_dir / "checkpoint.bin")

        k = plan.fold_index
        metrics_rows.append(
            [
                k,
                budget,
                normalization.value,
                family,
                report.mse_score,
                report.accuracy,
                result.best_epoch,
                result.epochs_run,
                result.wall_clock_s,
                result.peak_memory_bytes,
                result.parameter_count,
            ]
        )
        for t in range(report.confusion.shape[0]):
            for p in range(report.confusion.shape[1]):
                confusion_rows.append([k, t, p, int(report.confusion[t, p])])
        cal = report.calibration
        for b in range(len(cal.count)):
            calibration_rows.append(
                [k, b, float(cal.mean_conf[b]), float(cal.obs_frac[b]), int(cal.count[b])]
            )
        logger.info(
            "cell %s fold %d: mse_score %.4f accuracy %.4f (best epoch %d/%d)",
            name, k, report.mse_score, report.accuracy,
            result.best_epoch, result.epochs_run,
        )

    agg_dir = cell_dir / "aggregate"
    write_atomic_text(agg_dir / "metrics.csv", _csv_text(METRICS_COLUMNS, metrics_rows))
    write_atomic_text(
        agg_dir / "confusion.csv", _csv_text(("fold", "true", "pred", "count"), confusion_rows)
    )
    write_atomic_text(
        agg_dir / "calibration.csv",
        _csv_text(("fold", "bin", "mean_conf", "obs_frac", "count"), calibration_rows),
    )
    write_atomic_text(
        marker,
        json.dumps(
            {
                "status": "complete",
                "family": family,
                "budget": budget,
                "normalization": normalization.value,
                "folds": train_cfg.folds,
                "pool_size": int(len(pool_x)),
                "test_size": int(len(test_x)),
            },
            indent=2,
            sort_keys=True,
        ),
    )


def _write_fold_artifacts(
    fold_dir: Path,
    result,
    report: MetricsReport,
    model,
    train_cfg,
    model_seed: int,
) -> None:
    fold_dir.mkdir(parents=True, exist_ok=True)
    curves = [
        [e + 1, result.lrs[e], result.train_losses[e], result.val_losses[e]]
        for e in range(result.epochs_run)
    ]
    write_atomic_text(
        fold_dir / "curves.csv", _csv_text(("epoch", "lr", "train_loss", "val_loss"), curves)
    )
    cal = report.calibration
    payload = {
        "fold": result.fold_index,
        "family": train_cfg.family,
        "budget": train_cfg.budget_fraction,
        "normalization": train_cfg.normalization.value,
        "params": result.parameter_count,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "best_val_loss": result.best_val_loss,
        "mse_score": report.mse_score,
        "accuracy": report.accuracy,
        "n_test": report.n_samples,
        "wall_clock_s": result.wall_clock_s,
        "peak_memory_bytes": result.peak_memory_bytes,
        "confusion": report.confusion.tolist(),
        "calibration": {
            "mean_conf": cal.mean_conf.tolist(),
            "obs_frac": cal.obs_frac.tolist(),
            "count": cal.count.tolist(),
        },
    }
    write_atomic_text(fold_dir / "metrics.json", json.dumps(payload, indent=2, sort_keys=True))

    tmp = fold_dir / ".checkpoint.bin.tmp"
    save_checkpoint(
        model,
        tmp,
        seed=model_seed,
        epoch=result.best_epoch,
        metrics={"mse_score": report.mse_score, "accuracy": report.accuracy,
                 "val_loss": result.best_val_loss},
        extra={
            "fold": result.fold_index,
            "family": train_cfg.family,
            "budget": train_cfg.budget_fraction,
            "normalization": train_cfg.normalization.value,
        },
    )
    os.replace(tmp, fold_dir / "checkpoint.bin")


def _cell_worker(args) -> str:
    """Process-pool entry: rebuilds the config and re-derives the data pool,
    which is deterministic, so parallel results match serial ones."""
    cfg_dict, family, budget, norm_value, run_dir = args
    cfg = validate_config(cfg_dict)
    torch.set_num_threads(1)
    _run_cell(cfg, family, budget, NormalizationScheme(norm_value), Path(run_dir))
    return cell_name(family, budget, NormalizationScheme(norm_value))


# ---------------------------------------------------------------------------
# Provenance
# ---------------------------------------------------------------------------


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.to_dict(), sort_keys=True).encode()
    ).hexdigest()


def _git_commit() -> str | None:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.TimeoutExpired):
        return None
    if out.returncode != 0:
        return None
    return out.stdout.strip() or None


def provenance(cfg: ExperimentConfig) -> dict:
    return {
        "experiment_id": cfg.experiment_id,
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "derived_seeds": {
            "data": derive_seed(cfg.seed, "data"),
            "split": derive_seed(cfg.seed, "split"),
        },
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "qdbench_version": _pkg_version,
        "optimizer": {
            "name": "AdamW",
            "betas": list(ADAMW_BETAS),
            "eps": ADAMW_EPS,
        },
        "python": sys.version,
        "platform": platform.platform(),
        "packages": {
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "torch": torch.__version__,
            "pyyaml": yaml.__version__,
        },
        "git_commit": _git_commit(),
    }


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def run_experiment(
    cfg: ExperimentConfig,
    *,
    resume: bool = False,
    overwrite: bool = False,
    workers: int = 1,
) -> tuple[Path, list[dict]]:
    """Run every sweep cell; returns (run_dir, failures).

    A non-empty run directory is refused unless ``resume`` (finished cells
    are skipped) or ``overwrite`` (the directory is recreated) is set.
    Failed cells are isolated: each appears in failures.json with its
    traceback while the remaining cells still run.
    """
    if cfg.data.source == "path" and not Path(cfg.data.path or "").is_dir():
        raise ConfigError([f"data.path: dataset directory not found: {cfg.data.path}"])
    run_dir = Path(cfg.output_root) / cfg.experiment_id
    if run_dir.exists() and any(run_dir.iterdir()):
        if overwrite:
            shutil.rmtree(run_dir)
        elif not resume:
            raise FileExistsError(f"run directory {run_dir} is not empty")
    run_dir.mkdir(parents=True, exist_ok=True)

    from .config import config_to_yaml

    write_atomic_text(run_dir / "provenance.json",
                      json.dumps(provenance(cfg), indent=2, sort_keys=True))
    write_atomic_text(run_dir / "config.resolved.yaml", config_to_yaml(cfg))

    cells = cfg.cells()
    failures: list[dict] = []

    if workers > 1:
        cfg_dict = cfg.to_dict()
        jobs = [
            (cfg_dict, family, budget, norm.value, str(run_dir))
            for family, budget, norm in cells
        ]
        with ProcessPoolExecutor(
            max_workers=workers, mp_context=get_context("spawn")
        ) as pool:
            futures = {pool.submit(_cell_worker, job): job for job in jobs}
            for future, job in futures.items():
                name = cell_name(job[1], job[2], NormalizationScheme(job[3]))
                try:
                    future.result()
                except Exception as exc:
                    logger.error("cell %s failed: %s", name, exc)
                    failures.append(
                        {"cell": name, "error": str(exc),
                         "traceback": traceback.format_exc()}
                    )
    else:
        pool_cache = prepare_pool(cfg.data, derive_seed(cfg.seed, "data"))
        for family, budget, norm in cells:
            name = cell_name(family, budget, norm)
            try:
                _run_cell(cfg, family, budget, norm, run_dir, pool=pool_cache)
            except Exception as exc:
                logger.error("cell %s failed: %s", name, exc)
                failures.append(
                    {"cell": name, "error": str(exc), "traceback": traceback.format_exc()}
                )

    write_atomic_text(run_dir / "failures.json", json.dumps(failures, indent=2, sort_keys=True))

    from .report import render_report

    try:
        render_report(run_dir)
    except Exception as exc:
        logger.error("report rendering failed: %s", exc)
        failures.append(
            {"cell": "report", "error": str(exc), "traceback": traceback.format_exc()}
        )
        write_atomic_text(
            run_dir / "failures.json", json.dumps(failures, indent=2, sort_keys=True)
        )
    return run_dir, failures


# ---------------------------------------------------------------------------
# Checkpoint evaluation
# ---------------------------------------------------------------------------


def evaluate_checkpoint(checkpoint_path, data_path, bins: int = 10) -> MetricsReport:
    """Score a saved checkpoint against a dataset directory. Inputs are
    normalized with the scheme recorded in the checkpoint."""
    model, manifest = load_checkpoint(checkpoint_path)
    norm = manifest.get("extra", {}).get("normalization", NormalizationScheme.MIN_MAX.value)
    xs, ys = [], []
    for item in load_dataset(data_path):
        if isinstance(item, Patch):
            xs.append(item.pixels)
            ys.append(item.label.p)
        else:
            xs.append(unify_size(item.signal))
            ys.append(fractional_label(unify_size(item.state_map)).p)
    if not xs:
        raise DataError(f"{data_path}: dataset holds no usable items")
    x = normalize_batch(np.stack(xs), norm)
    return evaluate(forward(model, x), np.stack(ys), bins=bins)
