import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdbench import (
    DataError,
    ParameterError,
    accuracy,
    aggregate_folds,
    calibration_curve,
    confusion_matrix,
    evaluate,
    mse_score,
)

simplex_pairs = st.integers(min_value=1, max_value=8).flatmap(
    lambda n: st.tuples(
        st.lists(
            st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=5, max_size=5),
            min_size=n,
            max_size=n,
        ),
        st.lists(
            st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=5, max_size=5),
            min_size=n,
            max_size=n,
        ),
    )
).map(
    lambda pair: tuple(
        np.array([[v / sum(row) for v in row] for row in rows]) for rows in pair
    )
)


def _one_hot(i, n=1):
    out = np.zeros((n, 5))
    out[:, i] = 1.0
    return out


# ---------------------------------------------------------------------------
# mse_score
# ---------------------------------------------------------------------------


def test_mse_exact_match():
    rows = np.array([[0.2, 0.3, 0.1, 0.15, 0.25]])
    assert mse_score(rows, rows) == 1.0


def test_mse_opposing_one_hot():
    assert mse_score(_one_hot(0), _one_hot(4)) == pytest.approx(0.6, abs=1e-15)


def test_mse_uniform_vs_one_hot():
    pred = np.full((1, 5), 0.2)
    assert mse_score(pred, _one_hot(0)) == pytest.approx(0.84, abs=1e-12)


@given(simplex_pairs)
@settings(max_examples=50, deadline=None)
def test_mse_bounded_by_one(pair):
    pred, target = pair
    score = mse_score(pred, target)
    assert score <= 1.0
    if np.array_equal(pred, target):
        assert score == 1.0
    else:
        assert score < 1.0


# ---------------------------------------------------------------------------
# accuracy / confusion
# ---------------------------------------------------------------------------


def test_accuracy_counts_matching_argmax():
    pred = np.array([[0.6, 0.1, 0.1, 0.1, 0.1]])
    assert accuracy(pred, _one_hot(0)) == 1.0


def test_accuracy_on_fractional_label():
    target = np.array([[0.0, 0.3, 0.0, 0.0, 0.7]])
    pred = np.array([[0.05, 0.05, 0.05, 0.05, 0.8]])
    assert accuracy(pred, target) == 1.0


def test_accuracy_identity():
    rng = np.random.default_rng(0)
    rows = rng.dirichlet(np.ones(5), size=20)
    assert accuracy(rows, rows) == 1.0


def test_accuracy_ties_to_lowest_index():
    tied = np.array([[0.5, 0.5, 0.0, 0.0, 0.0]])
    assert accuracy(tied, _one_hot(0)) == 1.0
    assert accuracy(tied, _one_hot(1)) == 0.0


def test_confusion_perfect_diagonal():
    rng = np.random.default_rng(1)
    rows = rng.dirichlet(np.ones(5), size=25)
    conf = confusion_matrix(rows, rows)
    assert conf.trace() == 25
    assert conf.sum() == 25


def test_confusion_single_off_diagonal():
    conf = confusion_matrix(_one_hot(4), _one_hot(0))
    expected = np.zeros((5, 5), dtype=np.int64)
    expected[0, 4] = 1
    assert np.array_equal(conf, expected)


@given(simplex_pairs)
@settings(max_examples=50, deadline=None)
def test_confusion_marginals_and_trace(pair):
    pred, target = pair
    conf = confusion_matrix(pred, target)
    n = pred.shape[0]
    assert conf.sum() == n
    target_counts = np.bincount(np.argmax(target, axis=1), minlength=5)
    assert np.array_equal(conf.sum(axis=1), target_counts)
    assert conf.trace() / n == pytest.approx(accuracy(pred, target), abs=1e-12)


@given(simplex_pairs)
@settings(max_examples=40, deadline=None)
def test_argmax_metrics_invariant_under_monotone_rescale(pair):
    pred, target = pair
    squared = pred**2
    rescaled = squared / squared.sum(axis=1, keepdims=True)
    if not np.array_equal(np.argmax(rescaled, axis=1), np.argmax(pred, axis=1)):
        return  # squaring broke an argmax tie; invariance only promised without that
    assert accuracy(rescaled, target) == accuracy(pred, target)
    assert np.array_equal(confusion_matrix(rescaled, target), confusion_matrix(pred, target))


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def test_calibration_perfect_predictions():
    rng = np.random.default_rng(2)
    rows = rng.dirichlet(np.ones(5), size=40)
    cal = calibration_curve(rows, rows, bins=10)
    nonempty = cal.count > 0
    assert np.allclose(cal.mean_conf[nonempty], cal.obs_frac[nonempty], atol=1e-9)


def test_calibration_half_bin():
    pred = np.array([[0.5, 0.5, 0.0, 0.0, 0.0]] * 4)
    target = np.array([[0.5, 0.5, 0.0, 0.0, 0.0]] * 4)
    cal = calibration_curve(pred, target, bins=10)
    bin5 = 5  # 0.5 falls in [0.5, 0.6)
    assert cal.count[bin5] == 8
    assert cal.obs_frac[bin5] == pytest.approx(0.5, abs=1e-12)


def test_calibration_counts_sum_to_5n():
    rng = np.random.default_rng(3)
    pred = rng.dirichlet(np.ones(5), size=33)
    target = rng.dirichlet(np.ones(5), size=33)
    cal = calibration_curve(pred, target, bins=7)
    assert cal.count.sum() == 5 * 33
    assert cal.centers.shape == (7,)


def test_calibration_top_edge_in_last_bin():
    cal = calibration_curve(_one_hot(0), _one_hot(0), bins=10)
    assert cal.count[-1] == 1  # the 1.0 component
    assert cal.count[0] == 4  # the four 0.0 components


def test_calibration_rejects_bad_bins():
    with pytest.raises(ParameterError):
        calibration_curve(_one_hot(0), _one_hot(0), bins=1)


# ---------------------------------------------------------------------------
# aggregate_folds
# ---------------------------------------------------------------------------


def test_aggregate_identical_scores():
    stats = aggregate_folds({"mse_score": [0.9] * 10})["mse_score"]
    for key in ("min", "q1", "median", "q3", "max", "mean"):
        assert stats[key] == pytest.approx(0.9, abs=1e-15)
    assert stats["std"] == 0.0


def test_aggregate_median():
    stats = aggregate_folds({"accuracy": [0.1, 0.2, 0.3]})["accuracy"]
    assert stats["median"] == pytest.approx(0.2, abs=1e-15)


def test_aggregate_against_order_statistics_oracle():
    rng = np.random.default_rng(4)
    values = rng.uniform(size=13).tolist()
    stats = aggregate_folds({"m": values})["m"]
    ordered = sorted(values)
    # 13 points: (n - 1) divisible by 4, so the linear-interpolation
    # quantiles land exactly on order statistics.
    assert stats["min"] == ordered[0]
    assert stats["q1"] == pytest.approx(ordered[3], abs=1e-15)
    assert stats["median"] == pytest.approx(ordered[6], abs=1e-15)
    assert stats["q3"] == pytest.approx(ordered[9], abs=1e-15)
    assert stats["max"] == ordered[-1]
    assert stats["mean"] == pytest.approx(sum(values) / len(values), abs=1e-15)
    variance = sum((v - stats["mean"]) ** 2 for v in values) / len(values)
    assert stats["std"] == pytest.approx(variance**0.5, abs=1e-12)


def test_aggregate_rejects_empty():
    with pytest.raises(ParameterError):
        aggregate_folds({})
    with pytest.raises(ParameterError):
        aggregate_folds([])


def test_aggregate_accepts_fold_report_pairs():
    from qdbench import FoldResult, MetricsReport

    def fold(best, run, wall):
        return FoldResult(
            fold_index=0, best_epoch=best, epochs_run=run, best_val_loss=0.1,
            train_losses=[], val_losses=[], lrs=[], wall_clock_s=wall,
            peak_memory_bytes=1, parameter_count=10, best_state={},
        )

    def report(mse, acc):
        return MetricsReport(
            mse_score=mse, accuracy=acc, confusion=np.zeros((5, 5), dtype=int),
            calibration=None, n_samples=0,
        )

    pairs = [(fold(3, 5, 1.0), report(0.9, 0.8)), (fold(4, 6, 2.0), report(0.7, 0.6))]
    stats = aggregate_folds(pairs)
    assert stats["mse_score"]["mean"] == pytest.approx(0.8)
    assert stats["best_epoch"]["max"] == 4.0
    assert stats["epochs_run"]["min"] == 5.0


# ---------------------------------------------------------------------------
# evaluate / validation
# ---------------------------------------------------------------------------


def test_evaluate_bundles_consistent_report():
    rng = np.random.default_rng(5)
    pred = rng.dirichlet(np.ones(5), size=30)
    target = rng.dirichlet(np.ones(5), size=30)
    report = evaluate(pred, target, bins=10)
    assert report.n_samples == 30
    assert report.confusion.sum() == 30
    assert report.calibration.count.sum() == 150
    assert report.confusion.trace() / 30 == pytest.approx(report.accuracy, abs=1e-12)
    again = evaluate(pred, target, bins=10)
    assert again.mse_score == report.mse_score
    assert np.array_equal(again.confusion, report.confusion)


def test_metrics_reject_shape_and_sum_violations():
    good = np.full((2, 5), 0.2)
    with pytest.raises(DataError):
        mse_score(good, np.full((3, 5), 0.2))
    with pytest.raises(DataError):
        accuracy(good, np.full((2, 4), 0.25))
    bad_sum = good.copy()
    bad_sum[0, 0] = 0.5
    with pytest.raises(DataError):
        confusion_matrix(bad_sum, good)
    with pytest.raises(DataError):
        mse_score(np.empty((0, 5)), np.empty((0, 5)))
