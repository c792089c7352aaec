"""qdbench: reproducible benchmarks for charge-stability-diagram state
recognition with fractional labels."""

__version__ = "0.1.0"

from .errors import (
    BenchError,
    ConfigError,
    DataError,
    ParameterError,
    TrainingError,
)
from .synth import (
    N_STATES,
    STATE_NAMES,
    CSDRecord,
    SynthParams,
    compute_state_map,
    default_params,
    generate_csd,
)
from .data import (
    BUDGET_FRACTIONS,
    PATCH_PIXELS,
    PATCH_SIZE,
    DatasetSplit,
    LabelVector,
    NormalizationScheme,
    Patch,
    extract_patches,
    fractional_label,
    load_dataset,
    make_splits,
    normalize,
    normalize_batch,
    save_dataset,
    unify_size,
)
from .models import (
    FAMILIES,
    PARAM_TARGETS,
    MixtureParams,
    ModelSpec,
    build_model,
    count_parameters,
    forward,
    load_checkpoint,
    mdn_cdf_features,
    mixture_for_sample,
    model_spec,
    save_checkpoint,
)
from .training import (
    TABLE_DEFAULTS,
    EarlyStopping,
    FoldData,
    FoldResult,
    TrainConfig,
    cross_validate,
    default_train_config,
    derive_seed,
    kl_loss,
    lr_at,
    stratified_folds,
    train_one_fold,
)
from .metrics import (
    CalibrationBins,
    MetricsReport,
    accuracy,
    aggregate_folds,
    calibration_curve,
    confusion_matrix,
    evaluate,
    mse_score,
)
from .config import (
    ExperimentConfig,
    DataConfig,
    config_to_yaml,
    load_config,
    resolved_train_config,
    validate_config,
)
from .runner import evaluate_checkpoint, prepare_pool, run_experiment
from .report import render_report

__all__ = [
    "__version__",
    "BenchError", "ConfigError", "DataError", "ParameterError", "TrainingError",
    "N_STATES", "STATE_NAMES", "CSDRecord", "SynthParams",
    "compute_state_map", "default_params", "generate_csd",
    "BUDGET_FRACTIONS", "PATCH_PIXELS", "PATCH_SIZE",
    "DatasetSplit", "LabelVector", "NormalizationScheme", "Patch",
    "extract_patches", "fractional_label", "load_dataset", "make_splits",
    "normalize", "normalize_batch", "save_dataset", "unify_size",
    "FAMILIES", "PARAM_TARGETS", "MixtureParams", "ModelSpec",
    "build_model", "count_parameters", "forward", "load_checkpoint",
    "mdn_cdf_features", "mixture_for_sample", "model_spec", "save_checkpoint",
    "TABLE_DEFAULTS", "EarlyStopping", "FoldData", "FoldResult", "TrainConfig",
    "cross_validate", "default_train_config", "derive_seed", "kl_loss",
    "lr_at", "stratified_folds", "train_one_fold",
    "CalibrationBins", "MetricsReport", "accuracy", "aggregate_folds",
    "calibration_curve", "confusion_matrix", "evaluate", "mse_score",
    "ExperimentConfig", "DataConfig", "config_to_yaml", "load_config",
    "resolved_train_config", "validate_config",
    "evaluate_checkpoint", "prepare_pool", "run_experiment",
    "render_report",
]
