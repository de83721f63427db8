"""Regression metrics, seed aggregation, and report formatting.

All metrics are computed in double precision regardless of the input
dtype. Pearson correlation and R^2 are undefined when the relevant
variance vanishes; those cases raise :class:`DegenerateVarianceError`
rather than returning NaN, except for the constant mean-of-train
baseline whose report stores ``None`` (rendered as "-").
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import AggregationError, DegenerateVarianceError, ShapeError


def _paired(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ShapeError(f"prediction/target length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ShapeError("cannot compute metrics on empty arrays")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise ShapeError("predictions and targets must be finite")
    return p, t


def mae(pred, target) -> float:
    """Mean absolute error."""
    p, t = _paired(pred, target)
    return float(np.mean(np.abs(p - t)))


def pearson(pred, target) -> float:
    """Pearson correlation coefficient; requires variance on both sides."""
    p, t = _paired(pred, target)
    pc = p - p.mean()
    tc = t - t.mean()
    denom = math.sqrt(float(pc @ pc) * float(tc @ tc))
    if denom == 0.0:
        raise DegenerateVarianceError(
            "Pearson correlation undefined: a side has zero variance")
    return float(pc @ tc) / denom


def r2(pred, target) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    p, t = _paired(pred, target)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateVarianceError("R^2 undefined: targets have zero variance")
    ss_res = float(np.sum((t - p) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class MetricsReport:
    """Point metrics for one evaluation; None marks an undefined value."""

    n: int
    mae: float
    pearson: float | None
    r2: float | None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(n=int(d["n"]), mae=float(d["mae"]),
                   pearson=None if d["pearson"] is None else float(d["pearson"]),
                   r2=None if d["r2"] is None else float(d["r2"]))


def evaluate_predictions(pred, target) -> MetricsReport:
    """MAE + Pearson + R^2 for one prediction vector."""
    p, t = _paired(pred, target)
    return MetricsReport(n=p.size, mae=mae(p, t), pearson=pearson(p, t), r2=r2(p, t))


def mean_prediction(train_labels) -> float:
    """The constant the mean baseline predicts: the training-label mean."""
    train = np.asarray(train_labels, dtype=np.float64).ravel()
    if train.size == 0:
        raise ShapeError("baseline needs at least one training label")
    return float(train.mean())


def mean_baseline(train_labels, test_labels) -> MetricsReport:
    """Constant predictor emitting the training-label mean.

    Pearson and R^2 are undefined for a constant prediction vector and
    are stored as None.
    """
    const = mean_prediction(train_labels)
    test = np.asarray(test_labels, dtype=np.float64).ravel()
    pred = np.full_like(test, const)
    return MetricsReport(n=test.size, mae=mae(pred, test), pearson=None, r2=None)


@dataclass(frozen=True)
class AggregateReport:
    """Mean and sample standard deviation of a metric across seeds.

    Std fields are None for single-seed aggregates, where a sample
    standard deviation does not exist.
    """

    n_seeds: int
    mae_mean: float
    mae_std: float | None
    pearson_mean: float | None
    pearson_std: float | None
    r2_mean: float | None
    r2_std: float | None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateReport":
        def opt(v):
            return None if v is None else float(v)
        return cls(n_seeds=int(d["n_seeds"]), mae_mean=float(d["mae_mean"]),
                   mae_std=opt(d["mae_std"]), pearson_mean=opt(d["pearson_mean"]),
                   pearson_std=opt(d["pearson_std"]), r2_mean=opt(d["r2_mean"]),
                   r2_std=opt(d["r2_std"]))


def _agg(values: list[float | None], name: str) -> tuple[float | None, float | None]:
    defined = [v for v in values if v is not None]
    if not defined:
        return None, None
    if len(defined) != len(values):
        raise AggregationError(f"metric {name!r} defined for some seeds but not others")
    arr = np.asarray(defined, dtype=np.float64)
    if arr.size == 1:
        return float(arr[0]), None
    return float(arr.mean()), float(arr.std(ddof=1))


def aggregate_seeds(reports: Sequence[MetricsReport]) -> AggregateReport:
    """Mean +- sample std (ddof=1) of each metric over per-seed reports."""
    if len(reports) < 1:
        raise AggregationError("need at least one seed report to aggregate")
    mae_m, mae_s = _agg([r.mae for r in reports], "mae")
    p_m, p_s = _agg([r.pearson for r in reports], "pearson")
    r_m, r_s = _agg([r.r2 for r in reports], "r2")
    return AggregateReport(n_seeds=len(reports), mae_mean=mae_m, mae_std=mae_s,
                           pearson_mean=p_m, pearson_std=p_s, r2_mean=r_m, r2_std=r_s)


# --------------------------------------------------------------------------
# persistence and display
# --------------------------------------------------------------------------

def save_report(report, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_report(path: str):
    with open(path) as f:
        d = json.load(f)
    return AggregateReport.from_dict(d) if "n_seeds" in d else MetricsReport.from_dict(d)


def _fmt(value: float | None, std: float | None = None) -> str:
    if value is None:
        return "-"
    if std is None:
        return f"{value:.3f}"
    return f"{value:.3f} ± {std:.3f}"


def report_row(name: str, report) -> list[str]:
    """One table row from a MetricsReport or AggregateReport."""
    if isinstance(report, AggregateReport):
        return [name, _fmt(report.mae_mean, report.mae_std),
                _fmt(report.pearson_mean, report.pearson_std),
                _fmt(report.r2_mean, report.r2_std)]
    return [name, _fmt(report.mae), _fmt(report.pearson), _fmt(report.r2)]


def format_table(rows: list[list[str]],
                 headers: Sequence[str] = ("method", "MAE", "Pearson r", "R^2")) -> str:
    """Plain-text aligned table; column widths fit the widest cell."""
    table = [list(headers)] + [list(r) for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    lines = []
    for j, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
