"""Metrics, temporal aggregation, and the model comparison table.

Metrics are pooled over every (origin, horizon) pair on the count scale.
Explained variance is 1 - Var(residual)/Var(actual) with population
variance; a zero-variance actual series scores 1 when residuals are all
zero, else 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .pipeline import SLICES_PER_DAY, SLICES_PER_HOUR, STEP

AGGREGATION_LEVELS = ("quarter", "hourly", "daily")


@dataclass
class MetricsReport:
    mse: float
    mae: float
    explained_variance: float
    n: int

    def to_dict(self):
        return {"mse": self.mse, "mae": self.mae,
                "explained_variance": self.explained_variance, "n": self.n}


def compute_metrics(actual, predicted):
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1:
        raise ContractError(f"compute_metrics: mismatched value sequences {a.shape} vs {p.shape}")
    if a.size == 0:
        raise ContractError("compute_metrics: empty sequences")
    resid = a - p
    mse = float(np.mean(resid ** 2))
    mae = float(np.mean(np.abs(resid)))
    var_a = float(a.var())  # population
    if var_a == 0.0:
        ev = 1.0 if np.all(resid == 0.0) else 0.0
    else:
        ev = 1.0 - float(resid.var()) / var_a
    return MetricsReport(mse=mse, mae=mae, explained_variance=ev, n=int(a.size))


def _bucket_start(ts, level):
    if level == "hourly":
        return ts.replace(minute=0)
    if level == "daily":
        return ts.replace(hour=0, minute=0)
    raise ContractError(f"aggregation level must be one of {AGGREGATION_LEVELS[1:]}, got {level!r}")


def aggregate(quarter_series, level):
    """Sum quarter-hour values into complete clock hours or UTC days.

    ``quarter_series`` is an iterable of (timestamp, value); partial
    buckets (fewer than 4 or 96 slices) are dropped.
    """
    need = SLICES_PER_HOUR if level == "hourly" else SLICES_PER_DAY
    buckets = {}
    for ts, value in quarter_series:
        if ts.minute % 15 != 0:
            raise ContractError(f"timestamp {ts} is not on a 15-minute boundary")
        key = _bucket_start(ts, level)
        buckets.setdefault(key, []).append((ts, value))
    out = []
    for key in sorted(buckets):
        entries = buckets[key]
        if len(entries) == need:
            out.append((key, sum(v for _, v in entries)))
    return out


def mse_comparison(mse_model, mse_reference):
    """Signed integer percent improvement of the reference over the model."""
    if mse_reference <= 0:
        raise ContractError("mse_comparison: reference mse must be positive")
    return round((mse_reference - mse_model) / mse_reference * 100.0)


@dataclass
class ComparisonRow:
    data_label: str
    model_label: str
    metrics: MetricsReport
    n_lag: int
    n_look_ahead: int
    mse_comparison_pct: int = 0


def comparison_table(rows, sort_desc=False):
    """Fill in mse_comparison against the min-mse row and render the table.

    Returns (text, report) where ``report`` is the machine-readable form.
    Ties on the minimum mse resolve to the first row in input order.
    """
    if not rows:
        raise ContractError("comparison_table: need at least one row")
    reference = min(rows, key=lambda r: r.metrics.mse)  # first wins ties
    for row in rows:
        row.mse_comparison_pct = mse_comparison(row.metrics.mse, reference.metrics.mse)
    ordered = sorted(rows, key=lambda r: -r.metrics.mse) if sort_desc else list(rows)

    headers = ["data", "model", "mse", "mae", "explained_variance",
               "n_lag", "n_look_ahead", "mse_comparison"]
    table = [headers]
    for row in ordered:
        m = row.metrics
        table.append([row.data_label, row.model_label, f"{m.mse:.4g}", f"{m.mae:.4g}",
                      f"{m.explained_variance:.4g}", str(row.n_lag),
                      str(row.n_look_ahead), f"{row.mse_comparison_pct:+d}%"])
    widths = [max(len(r[c]) for r in table) for c in range(len(headers))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in table]
    text = "\n".join(lines)

    report = {"reference": {"data": reference.data_label, "model": reference.model_label},
              "rows": [{"data": r.data_label, "model": r.model_label,
                        **r.metrics.to_dict(), "n_lag": r.n_lag,
                        "n_look_ahead": r.n_look_ahead,
                        "mse_comparison_pct": r.mse_comparison_pct}
                       for r in ordered]}
    return text, report


def pooled_forecast_pairs(windows, predictions):
    """(timestamp, actual, predicted) triples for every (origin, horizon) pair."""
    pairs = []
    for w, preds in zip(windows, predictions):
        ts = w.origin
        for actual, pred in zip(w.targets, preds):
            ts = ts + STEP
            pairs.append((ts, float(actual), float(pred)))
    return pairs


def level_metrics(windows, predictions):
    """MetricsReport per aggregation level, pooled across origins.

    Hourly and daily levels aggregate within each origin's forecast span;
    a level whose buckets are all partial (look-ahead shorter than the
    bucket) reports n=0 with null metrics.
    """
    out = {}
    quarter_actual, quarter_pred = [], []
    agg_pairs = {"hourly": ([], []), "daily": ([], [])}
    for w, preds in zip(windows, predictions):
        times = [w.origin + STEP * (i + 1) for i in range(len(w.targets))]
        quarter_actual.extend(w.targets)
        quarter_pred.extend(preds)
        for level, (acts, prds) in agg_pairs.items():
            acts.extend(v for _, v in aggregate(zip(times, w.targets), level))
            prds.extend(v for _, v in aggregate(zip(times, preds), level))
    out["quarter"] = compute_metrics(quarter_actual, quarter_pred)
    for level, (acts, prds) in agg_pairs.items():
        out[level] = compute_metrics(acts, prds) if acts else None
    return out
