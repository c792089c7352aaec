"""Report rendering: summary CSV and figures from a run's aggregate CSVs.

The report is rebuilt purely from the per-cell ``aggregate/metrics.csv``
files, so it can be re-rendered after the fact (or for a partially
completed run, where absent cells are listed rather than fatal).
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import DataError
from .metrics import aggregate_folds
from .runner import _csv_text, write_atomic_text

logger = logging.getLogger(__name__)

# One color per data budget, shared by every figure.
BUDGET_COLORS = {
    0.25: "tab:green",
    0.50: "tab:blue",
    0.75: "gold",
    1.00: "tab:gray",
}

EPOCHS_SUMMARY_COLUMNS = (
    "family", "normalization", "budget", "min", "q1", "median", "q3", "max"
)


def _expected_cells(run_dir: Path) -> list[str]:
    """Cell names the resolved config promises, if the copy is readable."""
    resolved = run_dir / "config.resolved.yaml"
    if not resolved.is_file():
        return []
    from .config import validate_config
    from .errors import BenchError
    from .runner import cell_name

    try:
        cfg = validate_config(resolved.read_text())
    except BenchError:
        return []
    return [cell_name(*cell) for cell in cfg.cells()]


def _read_cell_metrics(run_dir: Path) -> tuple[list[dict], list[str]]:
    """All per-fold metric rows found under cells/, plus names of cells that
    are expected or present but have no aggregate metrics yet."""
    cells_dir = run_dir / "cells"
    rows: list[dict] = []
    missing: list[str] = []
    seen: set[str] = set()
    candidates = [cells_dir / name for name in _expected_cells(run_dir)]
    if cells_dir.is_dir():
        candidates += [p for p in cells_dir.iterdir() if p.is_dir()]
    for cell_dir in sorted(candidates):
        if cell_dir.name in seen:
            continue
        seen.add(cell_dir.name)
        metrics_path = cell_dir / "aggregate" / "metrics.csv"
        if not metrics_path.is_file():
            missing.append(cell_dir.name)
            continue
        with open(metrics_path, newline="") as fh:
            for raw in csv.DictReader(fh):
                rows.append(
                    {
                        "fold": int(raw["fold"]),
                        "budget": float(raw["budget"]),
                        "normalization": raw["normalization"],
                        "family": raw["family"],
                        "mse_score": float(raw["mse_score"]),
                        "accuracy": float(raw["accuracy"]),
                        "best_epoch": int(raw["best_epoch"]),
                        "epochs_run": int(raw["epochs_run"]),
                    }
                )
    return rows, missing


def _group(rows: list[dict]) -> dict[tuple[str, str, float], list[dict]]:
    grouped: dict[tuple[str, str, float], list[dict]] = {}
    for row in rows:
        grouped.setdefault((row["family"], row["normalization"], row["budget"]), []).append(row)
    return grouped


def _budget_color(budget: float) -> str:
    for known, color in BUDGET_COLORS.items():
        if abs(budget - known) < 1e-9:
            return color
    return "tab:purple"


def _boxpanel(ax, rows: list[dict], metric: str, families: list[str], budgets: list[float]):
    """Grouped box plots: one group per family, one colored box per budget."""
    group_width = len(budgets) + 1
    for fi, family in enumerate(families):
        for bi, budget in enumerate(budgets):
            values = [
                r[metric]
                for r in rows
                if r["family"] == family and abs(r["budget"] - budget) < 1e-9
            ]
            if not values:
                continue
            pos = fi * group_width + bi
            box = ax.boxplot(
                [values], positions=[pos], widths=0.8, patch_artist=True,
                medianprops={"color": "black"},
            )
            box["boxes"][0].set_facecolor(_budget_color(budget))
    ax.set_xticks([fi * group_width + (len(budgets) - 1) / 2 for fi in range(len(families))])
    ax.set_xticklabels(families)
    ax.grid(True, axis="y", alpha=0.3)


def render_report(run_dir, out_dir=None) -> dict:
    """Render the run report; returns written paths and absent cells.

    Writes ``epochs_summary.csv`` (five-number epoch summaries per cell) and
    per-normalization figures for epochs-to-convergence and test MSE score.
    Cells without aggregate metrics are listed, not fatal.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise DataError(f"run directory not found: {run_dir}")
    report_dir = Path(out_dir) if out_dir else run_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    rows, missing = _read_cell_metrics(run_dir)
    for name in missing:
        logger.warning("cell %s has no aggregate metrics; skipping", name)

    grouped = _group(rows)
    summary_rows = []
    for (family, norm, budget), cell_rows in sorted(grouped.items()):
        stats = aggregate_folds({"epochs_run": [r["epochs_run"] for r in cell_rows]})[
            "epochs_run"
        ]
        summary_rows.append(
            [family, norm, budget, stats["min"], stats["q1"], stats["median"],
             stats["q3"], stats["max"]]
        )
    summary_path = report_dir / "epochs_summary.csv"
    write_atomic_text(summary_path, _csv_text(EPOCHS_SUMMARY_COLUMNS, summary_rows))

    written = [str(summary_path)]
    norms = sorted({r["normalization"] for r in rows})
    families = sorted({r["family"] for r in rows})
    budgets = sorted({r["budget"] for r in rows})
    for norm in norms:
        norm_rows = [r for r in rows if r["normalization"] == norm]
        for metric, stem, label in (
            ("epochs_run", "epochs", "epochs to convergence"),
            ("mse_score", "mse", "test MSE score"),
        ):
            fig, ax = plt.subplots(figsize=(1.5 + 1.1 * len(families) * (len(budgets) + 1) / 4, 4))
            _boxpanel(ax, norm_rows, metric, families, budgets)
            ax.set_ylabel(label)
            ax.set_title(f"{label} by family and budget ({norm})")
            handles = [
                plt.Rectangle((0, 0), 1, 1, facecolor=_budget_color(b))
                for b in budgets
            ]
            ax.legend(
                handles,
                [f"{int(round(b * 100))}%" for b in budgets],
                title="budget", loc="best", fontsize=8,
            )
            fig.tight_layout()
            fig_path = report_dir / f"{stem}_{norm}.png"
            fig.savefig(fig_path, dpi=120)
            plt.close(fig)
            written.append(str(fig_path))

    if missing:
        write_atomic_text(
            report_dir / "missing_cells.txt", "\n".join(missing) + "\n"
        )
    return {"written": written, "missing_cells": missing}
