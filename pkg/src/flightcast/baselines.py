"""Comparison models: multiple linear regression and AR(p).

Both are fit by ordinary least squares through Householder QR (numpy's
``qr``), never the normal equations; the normal equations exist only as a
test oracle.  A rank-deficient design is rescued with a ridge jitter of
1e-8 and a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

RIDGE_JITTER = 1e-8

CALENDAR_ONE_HOT_WIDTH = 24 + 4 + 7 + 12  # hour, qtr, day-of-week, month


def _ols_qr(X, y):
    """Least-squares solve via QR with ridge rescue for rank deficiency."""
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    tol = max(X.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if diag.size == 0 or diag.min() <= tol:
        warnings.warn("rank-deficient design; solving with ridge jitter 1e-8")
        d = X.shape[1]
        Xa = np.vstack([X, np.sqrt(RIDGE_JITTER) * np.eye(d)])
        ya = np.concatenate([y, np.zeros((d,) + y.shape[1:])])
        q, r = np.linalg.qr(Xa)
        return np.linalg.solve(r, q.T @ ya)
    return np.linalg.solve(r, q.T @ y)


@dataclass
class LinearModel:
    """One OLS coefficient vector per horizon over a shared feature layout."""

    n_lag: int
    n_look_ahead: int
    use_swim: bool
    include_calendar: bool
    weights: np.ndarray     # (n_look_ahead, d)
    intercepts: np.ndarray  # (n_look_ahead,)


def window_features(window, use_swim, include_calendar):
    """Flattened LR feature vector: past demand, past swim, future calendar one-hots."""
    parts = [window.past_y]
    if use_swim:
        parts.append(window.past_x.reshape(-1))
    if include_calendar:
        tau = window.future_f.shape[0]
        onehot = np.zeros((tau, CALENDAR_ONE_HOT_WIDTH))
        cols = window.future_f + np.array([0, 24, 28, 35])
        onehot[np.arange(tau)[:, None], cols] = 1.0
        parts.append(onehot.reshape(-1))
    return np.concatenate(parts)


def fit_linear_regression(features, targets):
    """Per-horizon OLS on a shared design matrix (direct multi-horizon strategy)."""
    X = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    if n <= d:
        raise ContractError(f"fit_linear_regression: need more rows ({n}) than features ({d})")
    design = np.hstack([X, np.ones((n, 1))])
    coef = _ols_qr(design, Y)  # (d + 1, tau)
    return coef[:-1].T, coef[-1]  # weights (tau, d), intercepts (tau,)


def fit_linear_model(windows, use_swim=False, include_calendar=True):
    if not windows:
        raise ContractError("fit_linear_model: empty window list")
    X = np.stack([window_features(w, use_swim, include_calendar) for w in windows])
    Y = np.stack([w.targets for w in windows])
    weights, intercepts = fit_linear_regression(X, Y)
    first = windows[0]
    return LinearModel(n_lag=len(first.past_y), n_look_ahead=len(first.targets),
                       use_swim=use_swim, include_calendar=include_calendar,
                       weights=weights, intercepts=intercepts)


def linear_predict(model, window):
    x = window_features(window, model.use_swim, model.include_calendar)
    preds = model.weights @ x + model.intercepts
    return np.maximum(preds, 0.0)


@dataclass
class ARModel:
    """y_t = c + phi_1 y_{t-1} + ... + phi_p y_{t-p} + eps."""

    order: int
    intercept: float
    phi: np.ndarray
    residual_std: float

    def __post_init__(self):
        if self.order < 1:
            raise ContractError("AR order must be >= 1")
        if self.residual_std < 0:
            raise ContractError("residual_std must be >= 0")


def fit_ar(series, order):
    """OLS of y_t on [1, y_{t-1}, ..., y_{t-p}] over every valid t."""
    y = np.asarray(series, dtype=float)
    if order < 1:
        raise ContractError("fit_ar: order must be >= 1")
    if len(y) <= 2 * order:
        raise ContractError(f"fit_ar: series length {len(y)} too short for order {order} "
                            f"(need > {2 * order})")
    rows = len(y) - order
    lags = np.empty((rows, order))
    for k in range(1, order + 1):
        lags[:, k - 1] = y[order - k:len(y) - k]
    target = y[order:]

    if lags.std(axis=0).max() == 0.0:
        # constant regressors carry no signal: intercept-only model
        resid = target - target.mean()
        return ARModel(order=order, intercept=float(target.mean()),
                       phi=np.zeros(order), residual_std=float(resid.std()))

    design = np.hstack([np.ones((rows, 1)), lags])
    coef = _ols_qr(design, target)
    resid = target - design @ coef
    return ARModel(order=order, intercept=float(coef[0]), phi=coef[1:],
                   residual_std=float(resid.std()))


def ar_forecast(model, history, n_steps):
    """Recursive mean forecast (noise term treated as zero), clamped at >= 0.

    The recursion feeds raw (unclamped) predictions back into the lag
    window; clamping applies to the returned values only.
    """
    hist = np.asarray(history, dtype=float)
    if len(hist) < model.order:
        raise ContractError(f"ar_forecast: history of {len(hist)} shorter than order {model.order}")
    window = list(hist[-model.order:])
    out = np.empty(n_steps)
    for i in range(n_steps):
        nxt = model.intercept + float(np.dot(model.phi, window[::-1]))
        out[i] = nxt
        window.append(nxt)
        window.pop(0)
    return np.maximum(out, 0.0)
