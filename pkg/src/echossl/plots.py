"""Figures: prediction scatter with fit + confidence band, data efficiency.

Every plot call writes a raster (.png) and a vector (.svg) version of
the figure plus a ``.meta.json`` sidecar with the numbers that went into
the drawing (fit parameters, point coordinates), so tests and reports
can check the rendering without parsing image bytes. Rendering is
deterministic: fixed backend, figure size, and svg hash salt.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "echossl"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402

from .core import DegenerateVarianceError, InvalidInputError  # noqa: E402

CI_LEVEL = 0.90


def least_squares_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Closed-form simple linear regression: returns (slope, intercept)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise InvalidInputError("need at least 2 points to fit a line")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise DegenerateVarianceError("all x values identical; fit undefined")
    slope = float(xc @ (y - y.mean())) / sxx
    return slope, float(y.mean() - slope * x.mean())


def _fit_band(x, y, slope, intercept, grid):
    """90% confidence band for the mean of the fitted line on ``grid``."""
    n = x.size
    if n < 3:
        return None  # zero residual degrees of freedom
    resid = y - (slope * x + intercept)
    s2 = float(resid @ resid) / (n - 2)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    tq = stats.t.ppf(0.5 + CI_LEVEL / 2, df=n - 2)
    half = tq * np.sqrt(s2 * (1.0 / n + (grid - x.mean()) ** 2 / sxx))
    center = slope * grid + intercept
    return center - half, center + half


def _save_figure(fig, out_path: Path, meta: dict) -> dict:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    png = out_path.with_suffix(".png")
    svg = out_path.with_suffix(".svg")
    fig.savefig(png, dpi=120)
    fig.savefig(svg)
    plt.close(fig)
    meta = {**meta, "png": str(png), "svg": str(svg)}
    meta_path = out_path.with_suffix(".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    return meta


def plot_scatter(truth, pred, out_path: str | Path, title: str | None = None) -> dict:
    """Predicted-vs-truth scatter with a least-squares fit and 90% CI band.

    If the truth values are degenerate (zero variance) the fit is
    omitted and the figure carries a warning annotation instead of a
    line. Returns the sidecar metadata (fit parameters etc.).
    """
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if truth.size != pred.size:
        raise InvalidInputError("truth/prediction length mismatch")
    if truth.size < 2:
        raise InvalidInputError("need at least 2 prediction pairs")

    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    ax.scatter(truth, pred, s=18, color="#1f77b4", alpha=0.8, zorder=3)
    ax.set_xlabel("ground-truth CO (L/min)")
    ax.set_ylabel("predicted CO (L/min)")
    if title:
        ax.set_title(title)

    meta: dict = {"n": int(truth.size), "ci_level": CI_LEVEL}
    try:
        slope, intercept = least_squares_fit(truth, pred)
        grid = np.linspace(truth.min(), truth.max(), 100)
        ax.plot(grid, slope * grid + intercept, color="#d62728", lw=1.5, zorder=4)
        band = _fit_band(truth, pred, slope, intercept, grid)
        if band is not None:
            ax.fill_between(grid, band[0], band[1], color="#d62728", alpha=0.2,
                            linewidth=0, zorder=2)
        meta.update(slope=slope, intercept=intercept,
                    band="shown" if band is not None else "omitted")
    except DegenerateVarianceError:
        ax.annotate("fit omitted: degenerate truth variance",
                    xy=(0.5, 0.05), xycoords="axes fraction", ha="center",
                    fontsize=8, color="#d62728")
        meta.update(slope=None, intercept=None, band="omitted")
    fig.tight_layout()
    return _save_figure(fig, Path(out_path), meta)


def plot_data_efficiency(points, out_path: str | Path,
                         title: str | None = None) -> dict:
    """Test Pearson vs pretraining set size on a log-scaled x axis.

    ``points`` is a list of (size, pearson, label) triples; sizes must be
    positive. The metadata records each point's display x coordinate so
    the log placement is checkable.
    """
    if not points:
        raise InvalidInputError("need at least one point")
    for size, _, _ in points:
        if not (size > 0):
            raise InvalidInputError(f"sizes must be positive for a log axis, got {size}")

    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.set_xscale("log")
    for size, pearson_value, label in points:
        ax.scatter([size], [pearson_value], s=40, zorder=3)
        ax.annotate(str(label), xy=(size, pearson_value),
                    xytext=(4, 4), textcoords="offset points", fontsize=8)
    ax.set_xlabel("pretraining dataset size (videos, log scale)")
    ax.set_ylabel("test Pearson r")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.canvas.draw()
    display = [
        {"size": float(size), "pearson": float(p), "label": str(label),
         "log10_size": math.log10(size),
         "display_x": float(ax.transData.transform((size, p))[0])}
        for size, p, label in points
    ]
    return _save_figure(fig, Path(out_path), {"points": display})
