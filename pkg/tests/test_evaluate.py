import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx

from echossl.core import AggregationError, DegenerateVarianceError, ShapeError
from echossl.evaluate import (
    AggregateReport,
    MetricsReport,
    aggregate_seeds,
    evaluate_predictions,
    format_table,
    load_report,
    mae,
    mean_baseline,
    mean_prediction,
    pearson,
    r2,
    report_row,
    save_report,
)


def naive_mae(pred, target):
    return sum(abs(p - t) for p, t in zip(pred, target)) / len(pred)


def naive_pearson(pred, target):
    n = len(pred)
    mp = sum(pred) / n
    mt = sum(target) / n
    num = sum((p - mp) * (t - mt) for p, t in zip(pred, target))
    dp = math.sqrt(sum((p - mp) ** 2 for p in pred))
    dt = math.sqrt(sum((t - mt) ** 2 for t in target))
    return num / (dp * dt)


def naive_r2(pred, target):
    mt = sum(target) / len(target)
    ss_res = sum((t - p) ** 2 for p, t in zip(pred, target))
    ss_tot = sum((t - mt) ** 2 for t in target)
    return 1 - ss_res / ss_tot


# ---------------------------------------------------------------- worked example


def test_worked_example_exact():
    y = [1.0, 2.0, 3.0]
    yhat = [1.5, 2.0, 2.5]
    assert mae(yhat, y) == approx(1 / 3, abs=1e-12)
    assert pearson(yhat, y) == approx(1.0, abs=1e-12)
    assert r2(yhat, y) == approx(0.75, abs=1e-12)


@pytest.mark.parametrize("fn,expected", [
    (mae, 0.0), (pearson, 1.0), (r2, 1.0),
])
def test_perfect_prediction(fn, expected):
    y = np.array([2.0, 5.5, 7.25, 9.0])
    assert fn(y, y) == approx(expected, abs=1e-12)


def test_pearson_sign():
    y = np.array([1.0, 2.0, 4.0])
    assert pearson(-y, y) == approx(-1.0, abs=1e-12)


def test_r2_of_mean_prediction_is_zero():
    y = np.array([3.0, 1.0, 8.0, 4.0])
    pred = np.full_like(y, y.mean())
    assert r2(pred, y) == approx(0.0, abs=1e-12)


def test_r2_can_be_negative():
    y = np.array([1.0, 2.0, 3.0])
    assert r2(np.array([10.0, -10.0, 10.0]), y) < 0


# ---------------------------------------------------------------- errors


def test_length_mismatch_and_empty():
    with pytest.raises(ShapeError):
        mae([1.0, 2.0], [1.0])
    with pytest.raises(ShapeError):
        mae([], [])
    with pytest.raises(ShapeError):
        pearson([1.0, np.nan], [1.0, 2.0])


def test_degenerate_variance():
    y = np.array([1.0, 2.0, 3.0])
    const = np.full(3, 5.0)
    with pytest.raises(DegenerateVarianceError):
        pearson(const, y)  # constant predictions
    with pytest.raises(DegenerateVarianceError):
        pearson(y, const)  # constant targets
    with pytest.raises(DegenerateVarianceError):
        r2(y, const)  # R^2 needs target variance...
    assert r2(const, y) < 0  # ...but a constant prediction is fine (just bad)


# ---------------------------------------------------------------- oracle equivalence


@given(
    n=st.integers(2, 200),
    seed=st.integers(0, 2**32 - 1),
)
@settings(max_examples=60)
def test_metrics_match_naive_loops(n, seed):
    g = np.random.default_rng(seed)
    pred = g.normal(5, 2, size=n)
    target = g.normal(5, 2, size=n)
    assert mae(pred, target) == approx(naive_mae(pred, target), abs=1e-10)
    assert pearson(pred, target) == approx(naive_pearson(pred, target), abs=1e-10)
    assert r2(pred, target) == approx(naive_r2(pred, target), abs=1e-10)


@given(
    a=st.floats(0.1, 50), b=st.floats(-100, 100),
    seed=st.integers(0, 2**32 - 1),
)
@settings(max_examples=40)
def test_pearson_affine_invariance(a, b, seed):
    g = np.random.default_rng(seed)
    y = g.normal(size=25)
    yhat = g.normal(size=25)
    base = pearson(yhat, y)
    assert pearson(a * yhat + b, y) == approx(base, abs=1e-9)
    assert pearson(yhat, a * y + b) == approx(base, abs=1e-9)


@given(c=st.floats(-20, 20), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=40)
def test_mae_triangle_sanity(c, seed):
    g = np.random.default_rng(seed)
    y = g.normal(size=30)
    yhat = g.normal(size=30)
    assert mae(yhat, y) <= mae(np.full(30, c), y) + np.max(np.abs(c - yhat)) + 1e-12


# ---------------------------------------------------------------- baseline


def test_mean_prediction_constant():
    assert mean_prediction([2.0, 4.0]) == approx(3.0)
    with pytest.raises(ShapeError):
        mean_prediction([])


def test_mean_baseline_report():
    train = np.array([1.0, 3.0, 5.0])
    test = np.array([2.0, 6.0])
    rep = mean_baseline(train, test)
    assert rep.mae == approx(np.mean(np.abs(test - 3.0)))
    assert rep.pearson is None and rep.r2 is None
    # on the training split the baseline MAE is the mean absolute deviation
    on_train = mean_baseline(train, train)
    assert on_train.mae == approx(np.mean(np.abs(train - train.mean())))


# ---------------------------------------------------------------- aggregation


def test_aggregate_three_seeds():
    reports = [MetricsReport(n=24, mae=1.0 + i * 0.1, pearson=0.40 + i * 0.01, r2=0.1)
               for i in range(3)]
    agg = aggregate_seeds(reports)
    assert agg.n_seeds == 3
    assert agg.pearson_mean == approx(0.41)
    assert agg.pearson_std == approx(np.std([0.40, 0.41, 0.42], ddof=1))
    assert agg.r2_std == approx(0.0)


def test_aggregate_single_seed_has_no_std():
    agg = aggregate_seeds([MetricsReport(n=5, mae=1.0, pearson=0.5, r2=0.2)])
    assert agg.n_seeds == 1
    assert agg.mae_mean == approx(1.0)
    assert agg.mae_std is None and agg.pearson_std is None


def test_aggregate_rejects_mixed_none():
    good = MetricsReport(n=5, mae=1.0, pearson=0.5, r2=0.2)
    baseline_like = MetricsReport(n=5, mae=1.0, pearson=None, r2=None)
    with pytest.raises(AggregationError):
        aggregate_seeds([good, baseline_like])
    with pytest.raises(AggregationError):
        aggregate_seeds([])


def test_aggregate_all_none_metric_stays_none():
    reps = [MetricsReport(n=5, mae=1.0, pearson=None, r2=None)] * 2
    agg = aggregate_seeds(reps)
    assert agg.pearson_mean is None and agg.pearson_std is None


# ---------------------------------------------------------------- reports and IO


def test_evaluate_predictions_bundles_all_metrics():
    y = np.array([1.0, 2.0, 3.0])
    yhat = np.array([1.5, 2.0, 2.5])
    rep = evaluate_predictions(yhat, y)
    assert rep == MetricsReport(n=3, mae=rep.mae, pearson=rep.pearson, r2=rep.r2)
    assert rep.mae == approx(1 / 3)


def test_report_round_trip(tmp_path):
    rep = MetricsReport(n=24, mae=1.05, pearson=0.41, r2=0.12)
    save_report(rep, str(tmp_path / "report.json"))
    assert load_report(str(tmp_path / "report.json")) == rep

    agg = aggregate_seeds([rep, MetricsReport(n=24, mae=1.06, pearson=0.40, r2=0.11)])
    save_report(agg, str(tmp_path / "aggregate.json"))
    loaded = load_report(str(tmp_path / "aggregate.json"))
    assert isinstance(loaded, AggregateReport)
    assert loaded == agg


def test_format_table_layout():
    rows = [
        report_row("ssl-64", MetricsReport(n=24, mae=1.05, pearson=0.41, r2=0.12)),
        report_row("baseline (mean)", MetricsReport(n=24, mae=1.17, pearson=None,
                                                    r2=None)),
    ]
    text = format_table(rows)
    lines = text.splitlines()
    assert lines[0].split() == ["method", "MAE", "Pearson", "r", "R^2"]
    assert set(lines[1]) <= {"-", " "}
    assert "1.050" in lines[2] and "0.410" in lines[2]
    assert lines[3].count("-") >= 2  # undefined cells render as dashes
