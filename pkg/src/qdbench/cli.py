"""Command-line interface.

Subcommands: ``synth`` (write a dataset directory), ``validate`` (check a
config), ``run`` (execute the sweep), ``evaluate`` (score a checkpoint),
``report`` (re-render a run's report).

Exit codes: 0 success, 1 configuration error, 2 completed with failed
cells or a training abort, 3 I/O or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config
from .data import save_dataset
from .errors import ConfigError, DataError, TrainingError
from .runner import evaluate_checkpoint, run_experiment
from .synth import default_params, generate_csd
from .data import extract_patches

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_IO = 3

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdbench",
        description="Benchmark charge-stability-diagram state classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p_synth.add_argument("--out", required=True, help="output dataset directory")
    p_synth.add_argument("--records", type=int, default=10, help="number of scans")
    p_synth.add_argument(
        "--patches-per-record", type=int, default=10, help="patches sampled per scan"
    )
    p_synth.add_argument("--grid-size", type=int, default=250, help="scan size in pixels")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument(
        "--kind", choices=("patches", "records", "both"), default="patches",
        help="which items to store",
    )

    p_val = sub.add_parser("validate", help="validate an experiment config")
    p_val.add_argument("--config", required=True)

    p_run = sub.add_parser("run", help="run the benchmark sweep")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--resume", action="store_true", help="skip completed cells")
    p_run.add_argument(
        "--overwrite", action="store_true", help="replace a non-empty run directory"
    )
    p_run.add_argument("--workers", type=int, default=1, help="parallel cell workers")

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--bins", type=int, default=10, help="calibration bins")

    p_rep = sub.add_parser("report", help="re-render a run's report")
    p_rep.add_argument("--run", required=True, help="run directory")
    p_rep.add_argument("--out", default=None, help="alternative report directory")
    return parser


def _cmd_synth(args) -> int:
    items = []
    for i in range(args.records):
        params = default_params(args.seed + i, grid_size=args.grid_size)
        record = generate_csd(params, record_id=f"rec{i:05d}")
        if args.kind in ("records", "both"):
            items.append(record)
        if args.kind in ("patches", "both"):
            items.extend(
                extract_patches(record, args.patches_per_record, seed=args.seed + i)
            )
    save_dataset(items, args.out)
    print(f"wrote {len(items)} items to {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    cells = cfg.cells()
    print(f"config OK: experiment {cfg.experiment_id!r}, {len(cells)} cells "
          f"({len(cfg.families)} families x {len(cfg.budgets)} budgets x "
          f"{len(cfg.normalizations)} normalizations), {cfg.folds} folds")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    run_dir, failures = run_experiment(
        cfg, resume=args.resume, overwrite=args.overwrite, workers=args.workers
    )
    if failures:
        print(f"run finished with {len(failures)} failed cell(s); see "
              f"{run_dir / 'failures.json'}", file=sys.stderr)
        return EXIT_PARTIAL
    print(f"run complete: {run_dir}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    report = evaluate_checkpoint(args.checkpoint, args.data, bins=args.bins)
    print(
        json.dumps(
            {
                "mse_score": report.mse_score,
                "accuracy": report.accuracy,
                "n_samples": report.n_samples,
                "confusion": report.confusion.tolist(),
                "calibration": {
                    "mean_conf": report.calibration.mean_conf.tolist(),
                    "obs_frac": report.calibration.obs_frac.tolist(),
                    "count": report.calibration.count.tolist(),
                },
            },
            indent=2,
            sort_keys=True,
        )
    )
    return EXIT_OK


def _cmd_report(args) -> int:
    from .report import render_report

    result = render_report(args.run, out_dir=args.out)
    for path in result["written"]:
        print(f"wrote {path}")
    for name in result["missing_cells"]:
        print(f"missing cell: {name}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    args = _build_parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "validate": _cmd_validate,
        "run": _cmd_run,
        "evaluate": _cmd_evaluate,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except FileExistsError as exc:
        print(
            f"error: {exc}; pass --overwrite to replace it or --resume to "
            "continue it",
            file=sys.stderr,
        )
        return EXIT_IO
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
