"""Evaluation metrics for probability predictions against fractional labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError

N_CLASSES = 5
CALIBRATION_BINS = 10

_ROW_SUM_TOL = 1e-4


def _as_prob_rows(name: str, arr) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != N_CLASSES:
        raise DataError(f"{name} must have shape (N, {N_CLASSES}), got {out.shape}")
    sums = out.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > _ROW_SUM_TOL)[0]
    if bad.size:
        raise DataError(
            f"{name} row {bad[0]} sums to {sums[bad[0]]:.6f}, expected 1 within {_ROW_SUM_TOL}"
        )
    return out


def _paired(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = _as_prob_rows("pred", pred)
    t = _as_prob_rows("target", target)
    if p.shape != t.shape:
        raise DataError(f"pred shape {p.shape} != target shape {t.shape}")
    if p.shape[0] == 0:
        raise DataError("need at least one sample")
    return p, t


def mse_score(pred, target) -> float:
    """1 minus the mean squared error over all N x 5 components; 1.0 means
    exact agreement."""
    p, t = _paired(pred, target)
    return 1.0 - float(np.mean((p - t) ** 2))


def accuracy(pred, target) -> float:
    """Fraction of rows whose argmax matches (ties resolve to the lowest
    index on both sides)."""
    p, t = _paired(pred, target)
    return float(np.mean(np.argmax(p, axis=1) == np.argmax(t, axis=1)))


def confusion_matrix(pred, target) -> np.ndarray:
    """5x5 counts; entry (i, j) counts samples with target argmax i and
    prediction argmax j."""
    p, t = _paired(pred, target)
    ti = np.argmax(t, axis=1)
    pi = np.argmax(p, axis=1)
    flat = np.bincount(ti * N_CLASSES + pi, minlength=N_CLASSES * N_CLASSES)
    return flat.reshape(N_CLASSES, N_CLASSES).astype(np.int64)


@dataclass
class CalibrationBins:
    """Equal-width reliability bins over all pooled (prediction, target)
    component pairs."""

    edges: np.ndarray  # (B + 1,)
    mean_conf: np.ndarray  # (B,), 0 where empty
    obs_frac: np.ndarray  # (B,), 0 where empty
    count: np.ndarray  # (B,), sums to 5 * N

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def calibration_curve(pred, target, bins: int = CALIBRATION_BINS) -> CalibrationBins:
    """Reliability curve: every one of the N x 5 components contributes one
    (predicted probability, target fraction) pair, binned by prediction into
    `bins` equal-width bins; a prediction of exactly 1.0 lands in the last
    bin."""
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    p, t = _paired(pred, target)
    conf = p.ravel()
    obs = t.ravel()
    idx = np.clip(np.floor(conf * bins).astype(np.int64), 0, bins - 1)
    count = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    obs_sum = np.bincount(idx, weights=obs, minlength=bins)
    nonzero = np.maximum(count, 1)
    return CalibrationBins(
        edges=np.linspace(0.0, 1.0, bins + 1),
        mean_conf=np.where(count > 0, conf_sum / nonzero, 0.0),
        obs_frac=np.where(count > 0, obs_sum / nonzero, 0.0),
        count=count.astype(np.int64),
    )


@dataclass
class MetricsReport:
    mse_score: float
    accuracy: float
    confusion: np.ndarray
    calibration: CalibrationBins
    n_samples: int


def evaluate(pred, target, bins: int = CALIBRATION_BINS) -> MetricsReport:
    """All metrics for one prediction set."""
    p, t = _paired(pred, target)
    return MetricsReport(
        mse_score=mse_score(p, t),
        accuracy=accuracy(p, t),
        confusion=confusion_matrix(p, t),
        calibration=calibration_curve(p, t, bins),
        n_samples=p.shape[0],
    )


AGGREGATE_STATS = ("min", "q1", "median", "q3", "max", "mean", "std")


def aggregate_folds(results) -> dict[str, dict[str, float]]:
    """Five-number summary plus mean and population std for each metric
    across folds.

    Accepts either a mapping of metric name to per-fold values, or a list of
    (FoldResult, MetricsReport) pairs, from which the standard metrics
    (mse_score, accuracy, best_epoch, epochs_run, wall_clock_s) are pulled.
    """
    if isinstance(results, dict):
        per_fold = results
    else:
        pairs = list(results)
        if not pairs:
            raise ParameterError("cannot aggregate an empty result set")
        per_fold = {
            "mse_score": [rep.mse_score for _, rep in pairs],
            "accuracy": [rep.accuracy for _, rep in pairs],
            "best_epoch": [fr.best_epoch for fr, _ in pairs],
            "epochs_run": [fr.epochs_run for fr, _ in pairs],
            "wall_clock_s": [fr.wall_clock_s for fr, _ in pairs],
        }
    if not per_fold:
        raise ParameterError("cannot aggregate an empty result set")
    summary = {}
    for name, values in per_fold.items():
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            raise ParameterError(f"metric {name!r} has no fold values to aggregate")
        q0, q1, q2, q3, q4 = np.percentile(arr, [0, 25, 50, 75, 100])
        summary[name] = {
            "min": float(q0),
            "q1": float(q1),
            "median": float(q2),
            "q3": float(q3),
            "max": float(q4),
            "mean": float(arr.mean()),
            "std": float(arr.std()),
        }
    return summary
