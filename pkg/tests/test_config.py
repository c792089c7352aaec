import pytest

from qdbench import (
    ConfigError,
    NormalizationScheme,
    config_to_yaml,
    load_config,
    resolved_train_config,
    validate_config,
)

MINIMAL = {"experiment_id": "exp", "families": ["cnn"]}


def test_minimal_config_fills_documented_defaults():
    cfg = validate_config(dict(MINIMAL))
    assert cfg.experiment_id == "exp"
    assert cfg.families == ["cnn"]
    assert cfg.budgets == [0.25, 0.5, 0.75, 1.0]
    assert cfg.normalizations == [NormalizationScheme.MIN_MAX, NormalizationScheme.Z_SCORE]
    assert cfg.folds == 10
    assert cfg.seed == 0
    assert cfg.calibration_bins == 10
    assert cfg.data.source == "synth"
    assert cfg.data.records == 250
    assert cfg.data.patches_per_record == 10
    assert cfg.data.test_count == 500
    assert cfg.train == {}


def test_full_sweep_has_32_cells():
    cfg = validate_config(
        {"experiment_id": "full", "families": ["cnn", "unet", "vit", "mdn"]}
    )
    cells = cfg.cells()
    assert len(cells) == 32
    # 8 runs per family: 4 budgets x 2 normalizations
    per_family = [c for c in cells if c[0] == "vit"]
    assert len(per_family) == 8


def test_missing_families_named():
    with pytest.raises(ConfigError) as exc:
        validate_config({"experiment_id": "x"})
    assert any("families" in line for line in exc.value.errors)


def test_bad_budget_cites_allowed_set():
    with pytest.raises(ConfigError) as exc:
        validate_config({**MINIMAL, "budgets": [0.3]})
    (line,) = [l for l in exc.value.errors if l.startswith("budgets")]
    assert "0.25" in line and "0.5" in line and "0.75" in line and "1.0" in line


def test_unknown_keys_rejected_everywhere():
    raw = {
        **MINIMAL,
        "colour": "red",
        "data": {"records": 5, "gpu": True},
        "train": {"cnn": {"learning_rate": 0.001, "momentum": 0.9}},
    }
    with pytest.raises(ConfigError) as exc:
        validate_config(raw)
    text = "\n".join(exc.value.errors)
    assert "colour: unknown key" in text
    assert "data.gpu: unknown key" in text
    assert "train.cnn.momentum: unknown key" in text


def test_all_errors_collected_not_fail_fast():
    raw = {
        "experiment_id": "",
        "families": ["cnn", "lstm"],
        "budgets": [0.3],
        "normalizations": ["robust"],
        "folds": 1,
        "train": {"cnn": {"learning_rate": -2.0, "scheduler": "step"}},
    }
    with pytest.raises(ConfigError) as exc:
        validate_config(raw)
    errors = exc.value.errors
    assert len(errors) >= 6
    joined = "\n".join(errors)
    for path in (
        "experiment_id",
        "families[1]",
        "budgets[0]",
        "normalizations[0]",
        "folds",
        "train.cnn.learning_rate",
        "train.cnn.scheduler",
    ):
        assert path in joined, path


def test_path_source_requires_path():
    with pytest.raises(ConfigError) as exc:
        validate_config({**MINIMAL, "data": {"source": "path"}})
    assert any("data.path" in line for line in exc.value.errors)


def test_invalid_yaml_text():
    with pytest.raises(ConfigError):
        validate_config("experiment_id: [unclosed")
    with pytest.raises(ConfigError):
        validate_config("- just\n- a\n- list\n")


def test_train_overrides_validated():
    cfg = validate_config(
        {
            **MINIMAL,
            "train": {"cnn": {"learning_rate": 0.01, "max_epochs": 5, "patience": 2}},
        }
    )
    tc = resolved_train_config(cfg, "cnn", 0.5, NormalizationScheme.Z_SCORE, seed=9)
    assert tc.learning_rate == 0.01
    assert tc.max_epochs == 5
    assert tc.patience == 2
    assert tc.weight_decay == 0.0002  # untouched default
    assert tc.budget_fraction == 0.5
    assert tc.normalization is NormalizationScheme.Z_SCORE
    assert tc.seed == 9


def test_patience_must_stay_below_max_epochs():
    with pytest.raises(ConfigError) as exc:
        validate_config({**MINIMAL, "train": {"cnn": {"max_epochs": 5, "patience": 5}}})
    assert any("patience" in line for line in exc.value.errors)


def test_duplicate_family_rejected():
    with pytest.raises(ConfigError):
        validate_config({"experiment_id": "x", "families": ["cnn", "cnn"]})


def test_resolved_yaml_round_trips(tmp_path):
    cfg = validate_config(
        {
            **MINIMAL,
            "seed": 3,
            "budgets": [0.25, 1.0],
            "normalizations": ["z_score"],
            "train": {"cnn": {"batch_size": 32}},
        }
    )
    text = config_to_yaml(cfg)
    again = validate_config(text)
    assert again.to_dict() == cfg.to_dict()
    path = tmp_path / "cfg.yaml"
    path.write_text(text)
    assert load_config(path).to_dict() == cfg.to_dict()


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
