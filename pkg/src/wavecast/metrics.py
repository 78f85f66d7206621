"""Regression evaluation: the eight-metric report and fold aggregation.

All metrics are computed from the residuals r_i = y_i - yhat_i of a single
evaluation pass:

    mse       mean(r^2)
    rmse      sqrt(mse)
    loss      mse / 2            (the training objective without the L2 term)
    mae       mean(|r|)
    r2        1 - sum(r^2) / sum((y - mean(y))^2)
    msle      mean((log1p(y) - log1p(yhat))^2)
    medae     median(|r|)
    max_error max(|r|)

``r2`` is undefined for a constant target (zero total variance) and is
reported as None with a flag rather than a division by zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import DomainError

METRIC_NAMES = ("mse", "rmse", "loss", "mae", "r2", "msle", "medae", "max_error")

CSV_HEADER = ("site", "model", "fold") + METRIC_NAMES


@dataclass
class EvalReport:
    mse: float
    rmse: float
    loss: float
    mae: float
    r2: float | None
    msle: float
    medae: float
    max_error: float
    n: int
    r2_undefined: bool = False

    def values(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_csv_row(self, site, model, fold):
        vals = [repr(float(getattr(self, m))) if getattr(self, m) is not None else ""
                for m in METRIC_NAMES]
        return [str(site), str(model), str(fold)] + vals


def evaluate(y, y_hat):
    """Compute the eight-metric report for targets ``y`` and predictions ``y_hat``.

    Both are 1-d float arrays of equal length n >= 2.  msle requires every
    value in both arrays to be > -1 (log1p domain).
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise ValueError(f"evaluate: length mismatch, y has {y.shape[0]} values, "
                         f"y_hat has {y_hat.shape[0]}")
    n = y.shape[0]
    if n < 2:
        raise ValueError(f"evaluate: need at least 2 samples, got {n}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(y_hat))):
        raise ValueError("evaluate: non-finite values in inputs")

    resid = y - y_hat
    sq = resid * resid
    mse = float(sq.mean())
    abs_r = np.abs(resid)

    if np.any(y <= -1.0) or np.any(y_hat <= -1.0):
        raise DomainError("msle: all values must be > -1 (log1p domain)")
    log_d = np.log1p(y) - np.log1p(y_hat)

    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = None
        undefined = True
    else:
        r2 = 1.0 - float(sq.sum()) / ss_tot
        undefined = False

    return EvalReport(
        mse=mse,
        rmse=math.sqrt(mse),
        loss=mse / 2.0,
        mae=float(abs_r.mean()),
        r2=r2,
        msle=float((log_d * log_d).mean()),
        medae=float(np.median(abs_r)),
        max_error=float(abs_r.max()),
        n=n,
        r2_undefined=undefined,
    )


@dataclass
class AggregateStats:
    mean: float
    min: float
    max: float
    std: float  # population std (ddof=0) across folds
    n_folds: int


def aggregate(reports):
    """Per-metric mean/min/max/population-std over a list of fold reports.

    Raises if any fold has an undefined r2 — aggregating over a mix of
    defined and undefined values would be silently misleading.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate: no reports")
    out = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports]
        if any(v is None for v in vals):
            raise ValueError(f"aggregate: metric {name!r} undefined in at least one fold")
        arr = np.array(vals, dtype=np.float64)
        out[name] = AggregateStats(mean=float(arr.mean()), min=float(arr.min()),
                                   max=float(arr.max()), std=float(arr.std(ddof=0)),
                                   n_folds=len(reports))
    return out
