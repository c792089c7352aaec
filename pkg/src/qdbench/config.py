"""Experiment configuration: YAML schema, validation, default filling.

Validation is total: every problem in a document is collected and reported
in one shot with its path (e.g. ``train.cnn.batch_size``), unknown keys are
rejected, and omitted keys take their documented defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .data import BUDGET_FRACTIONS, NormalizationScheme
from .errors import ConfigError
from .training import SCHEDULES, TABLE_DEFAULTS, TrainConfig, default_train_config

DEFAULT_BUDGETS = list(BUDGET_FRACTIONS)
DEFAULT_FAMILIES = list(TABLE_DEFAULTS)
DEFAULT_NORMALIZATIONS = [NormalizationScheme.MIN_MAX, NormalizationScheme.Z_SCORE]

# Per-family keys a config may override; everything else is fixed.
TRAIN_OVERRIDE_KEYS = (
    "learning_rate",
    "weight_decay",
    "scheduler",
    "max_epochs",
    "patience",
    "batch_size",
    "dropout",
)

_TOP_KEYS = {
    "experiment_id",
    "seed",
    "output_root",
    "families",
    "budgets",
    "normalizations",
    "folds",
    "calibration_bins",
    "data",
    "train",
}

_DATA_KEYS = {"source", "records", "patches_per_record", "grid_size", "test_count", "path"}


@dataclass
class DataConfig:
    source: str = "synth"
    records: int = 250
    patches_per_record: int = 10
    grid_size: int = 250
    test_count: int = 500
    path: str | None = None


@dataclass
class ExperimentConfig:
    experiment_id: str
    seed: int = 0
    output_root: str = "runs"
    families: list[str] = field(default_factory=lambda: list(DEFAULT_FAMILIES))
    budgets: list[float] = field(default_factory=lambda: list(DEFAULT_BUDGETS))
    normalizations: list[NormalizationScheme] = field(
        default_factory=lambda: list(DEFAULT_NORMALIZATIONS)
    )
    folds: int = 10
    calibration_bins: int = 10
    data: DataConfig = field(default_factory=DataConfig)
    train: dict[str, dict] = field(default_factory=dict)

    def cells(self) -> list[tuple[str, float, NormalizationScheme]]:
        """Every (family, budget, normalization) combination, in sweep order."""
        return [
            (fam, budget, norm)
            for fam in self.families
            for budget in self.budgets
            for norm in self.normalizations
        ]

    def to_dict(self) -> dict:
        """Fully resolved plain dict (defaults filled), YAML-serializable."""
        return {
            "experiment_id": self.experiment_id,
            "seed": self.seed,
            "output_root": self.output_root,
            "families": list(self.families),
            "budgets": [float(b) for b in self.budgets],
            "normalizations": [n.value for n in self.normalizations],
            "folds": self.folds,
            "calibration_bins": self.calibration_bins,
            "data": {
                "source": self.data.source,
                "records": self.data.records,
                "patches_per_record": self.data.patches_per_record,
                "grid_size": self.data.grid_size,
                "test_count": self.data.test_count,
                "path": self.data.path,
            },
            "train": {fam: dict(ov) for fam, ov in sorted(self.train.items())},
        }


def _expect(errors: list[str], path: str, value, kind, positive=False):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        errors.append(f"{path}: expected {kind.__name__}, got {type(value).__name__}")
        return None
    if positive and not value > 0:
        errors.append(f"{path}: must be positive, got {value}")
        return None
    return value


def validate_config(raw) -> ExperimentConfig:
    """Validate a parsed mapping (or YAML text) into an ExperimentConfig.

    Raises ConfigError carrying every violation found, each prefixed with
    the offending key path.
    """
    if isinstance(raw, (str, bytes)):
        try:
            raw = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError([f"invalid YAML: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"config must be a mapping, got {type(raw).__name__}"])

    errors: list[str] = []
    for key in sorted(set(raw) - _TOP_KEYS):
        errors.append(f"{key}: unknown key")

    cfg = ExperimentConfig(experiment_id="")

    if "experiment_id" not in raw:
        errors.append("experiment_id: required")
    else:
        value = _expect(errors, "experiment_id", raw["experiment_id"], str)
        if value is not None:
            if not value or any(c in value for c in "/\\"):
                errors.append(f"experiment_id: must be a non-empty name without slashes, got {value!r}")
            else:
                cfg.experiment_id = value

    if "seed" in raw:
        value = _expect(errors, "seed", raw["seed"], int)
        if value is not None:
            if value < 0:
                errors.append(f"seed: must be >= 0, got {value}")
            else:
                cfg.seed = value

    if "output_root" in raw:
        value = _expect(errors, "output_root", raw["output_root"], str)
        if value:
            cfg.output_root = value

    if "families" not in raw:
        errors.append("families: required")
    else:
        fams = raw["families"]
        if not isinstance(fams, list) or not fams:
            errors.append("families: expected a non-empty list")
        else:
            ok = []
            for i, fam in enumerate(fams):
                if fam not in TABLE_DEFAULTS:
                    errors.append(
                        f"families[{i}]: unknown family {fam!r}; expected one of {list(TABLE_DEFAULTS)}"
                    )
                elif fam in ok:
                    errors.append(f"families[{i}]: duplicate family {fam!r}")
                else:
                    ok.append(fam)
            if ok and len(ok) == len(fams):
                cfg.families = ok

    if "budgets" in raw:
        buds = raw["budgets"]
        if not isinstance(buds, list) or not buds:
            errors.append("budgets: expected a non-empty list")
        else:
            ok = []
            for i, b in enumerate(buds):
                numeric = isinstance(b, (int, float)) and not isinstance(b, bool)
                if numeric and any(abs(float(b) - f) < 1e-12 for f in BUDGET_FRACTIONS):
                    ok.append(float(b))
                else:
                    errors.append(
                        f"budgets[{i}]: must be one of {list(BUDGET_FRACTIONS)}, got {b!r}"
                    )
            if ok and len(ok) == len(buds):
                cfg.budgets = ok

    if "normalizations" in raw:
        norms = raw["normalizations"]
        if not isinstance(norms, list) or not norms:
            errors.append("normalizations: expected a non-empty list")
        else:
            ok = []
            for i, n in enumerate(norms):
                try:
                    ok.append(NormalizationScheme(n))
                except ValueError:
                    errors.append(
                        f"normalizations[{i}]: unknown scheme {n!r}; expected one of "
                        f"{[s.value for s in NormalizationScheme]}"
                    )
            if ok and len(ok) == len(norms):
                cfg.normalizations = ok

    if "folds" in raw:
        value = _expect(errors, "folds", raw["folds"], int)
        if value is not None:
            if value < 2:
                errors.append(f"folds: must be >= 2, got {value}")
            else:
                cfg.folds = value

    if "calibration_bins" in raw:
        value = _expect(errors, "calibration_bins", raw["calibration_bins"], int, positive=True)
        if value is not None:
            cfg.calibration_bins = value

    if "data" in raw:
        block = raw["data"]
        if not isinstance(block, dict):
            errors.append(f"data: expected a mapping, got {type(block).__name__}")
        else:
            for key in sorted(set(block) - _DATA_KEYS):
                errors.append(f"data.{key}: unknown key")
            if "source" in block:
                if block["source"] not in ("synth", "path"):
                    errors.append(
                        f"data.source: must be 'synth' or 'path', got {block['source']!r}"
                    )
                else:
                    cfg.data.source = block["source"]
            for key in ("records", "patches_per_record", "grid_size", "test_count"):
                if key in block:
                    value = _expect(errors, f"data.{key}", block[key], int, positive=True)
                    if value is not None:
                        setattr(cfg.data, key, value)
            if cfg.data.grid_size < 30:
                errors.append(f"data.grid_size: must be >= 30, got {cfg.data.grid_size}")
            if "path" in block and block["path"] is not None:
                value = _expect(errors, "data.path", block["path"], str)
                if value:
                    cfg.data.path = value
            if cfg.data.source == "path" and not cfg.data.path:
                errors.append("data.path: required when data.source is 'path'")

    if "train" in raw:
        block = raw["train"]
        if not isinstance(block, dict):
            errors.append(f"train: expected a mapping, got {type(block).__name__}")
        else:
            for fam, overrides in block.items():
                if fam not in TABLE_DEFAULTS:
                    errors.append(f"train.{fam}: unknown family")
                    continue
                if not isinstance(overrides, dict):
                    errors.append(f"train.{fam}: expected a mapping")
                    continue
                clean = {}
                for key, value in overrides.items():
                    path = f"train.{fam}.{key}"
                    if key not in TRAIN_OVERRIDE_KEYS:
                        errors.append(f"{path}: unknown key")
                    elif key == "scheduler":
                        if value not in SCHEDULES:
                            errors.append(
                                f"{path}: must be one of {list(SCHEDULES)}, got {value!r}"
                            )
                        else:
                            clean[key] = value
                    elif key in ("learning_rate", "dropout"):
                        v = _expect(errors, path, value, float)
                        if v is not None:
                            if key == "learning_rate" and not v > 0:
                                errors.append(f"{path}: must be positive, got {v}")
                            elif key == "dropout" and not 0 <= v < 1:
                                errors.append(f"{path}: must lie in [0, 1), got {v}")
                            else:
                                clean[key] = v
                    elif key == "weight_decay":
                        v = _expect(errors, path, value, float)
                        if v is not None:
                            if v < 0:
                                errors.append(f"{path}: must be >= 0, got {v}")
                            else:
                                clean[key] = v
                    else:  # max_epochs, patience, batch_size
                        v = _expect(errors, path, value, int)
                        if v is not None:
                            if key != "patience" and v < 1:
                                errors.append(f"{path}: must be >= 1, got {v}")
                            elif key == "patience" and v < 0:
                                errors.append(f"{path}: must be >= 0, got {v}")
                            else:
                                clean[key] = v
                if clean:
                    cfg.train[fam] = clean
            for fam, clean in cfg.train.items():
                max_epochs = clean.get("max_epochs", TrainConfig.max_epochs)
                patience = clean.get("patience", TrainConfig.patience)
                if patience >= max_epochs:
                    errors.append(
                        f"train.{fam}.patience: must be < max_epochs ({max_epochs}), got {patience}"
                    )

    if errors:
        raise ConfigError(sorted(errors))
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML experiment config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from exc
    return validate_config(text)


def resolved_train_config(
    cfg: ExperimentConfig,
    family: str,
    budget: float,
    normalization: NormalizationScheme,
    seed: int,
) -> TrainConfig:
    """Per-family defaults merged with config overrides for one sweep cell."""
    overrides = dict(cfg.train.get(family, {}))
    overrides.update(
        folds=cfg.folds,
        budget_fraction=budget,
        normalization=normalization,
        seed=seed,
    )
    return default_train_config(family, **overrides)


def config_to_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)
