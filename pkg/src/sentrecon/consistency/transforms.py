"""Price representations, the ADF stationarity safeguard and NaN alignment helpers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

# MacKinnon (2010) response-surface coefficients, constant-only model, 5% level
_MACKINNON_C_5PCT = (-2.86154, -2.8903, -4.234, -40.040)
_LAG_T_STOP = 1.6448536269514722


def rolling_minmax(x: np.ndarray, window: int) -> np.ndarray:
    """Position of ``x[k]`` inside its trailing-``window`` range, in [0, 1].

    A flat window maps to 0.5; a window with any missing value is missing.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, np.nan)
    for k in range(window - 1, x.shape[0]):
        w = x[k - window + 1: k + 1]
        if np.isnan(w).any():
            continue
        lo, hi = w.min(), w.max()
        out[k] = 0.5 if hi == lo else (x[k] - lo) / (hi - lo)
    return out


def rolling_log_return(prices: np.ndarray, window: int = 1) -> np.ndarray:
    """``log P(k) - log P(k - window)``; missing where either endpoint is."""
    p = np.asarray(prices, dtype=float)
    if np.any(p[~np.isnan(p)] <= 0):
        raise ValueError("prices must be positive")
    if window < 1:
        raise ValueError("window must be >= 1")
    out = np.full_like(p, np.nan)
    with np.errstate(invalid="ignore"):
        lp = np.log(p)
    out[window:] = lp[window:] - lp[:-window]
    return out


@dataclass(frozen=True)
class AdfResult:
    t_stat: float
    crit_5pct: float
    reject: bool
    lag: int
    nobs: int


def mackinnon_crit_5pct(nobs: int) -> float:
    b0, b1, b2, b3 = _MACKINNON_C_5PCT
    return b0 + b1 / nobs + b2 / nobs**2 + b3 / nobs**3


def _adf_regression(x: np.ndarray, lag: int, first: int) -> tuple[np.ndarray, np.ndarray]:
    dx = np.diff(x)
    n = x.shape[0]
    rows = range(first, n)  # index t into x, regress dx[t-1] on ...
    X = np.empty((len(rows), 2 + lag))
    yv = np.empty(len(rows))
    for r, t in enumerate(rows):
        yv[r] = dx[t - 1]
        X[r, 0] = 1.0
        X[r, 1] = x[t - 1]
        for j in range(1, lag + 1):
            X[r, 1 + j] = dx[t - 1 - j]
    return X, yv


def _ols_t(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = X.shape[0] - X.shape[1]
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.pinv(X.T @ X)
    return beta / np.sqrt(np.diag(cov))


def adf_test(x: np.ndarray, max_lag: int = 4, min_obs: int = 25) -> AdfResult | None:
    """Augmented Dickey-Fuller test with a constant.

    The augmentation lag is chosen top-down: starting at ``max_lag`` the last
    lag is dropped while its |t| is below 1.645, all on a common sample.
    Returns ``None`` for series shorter than ``min_obs``.
    """
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    n = x.shape[0]
    if n < min_obs:
        return None
    lag = max_lag
    while lag > 0:
        X, y = _adf_regression(x, lag, max_lag + 1)
        if abs(_ols_t(X, y)[-1]) >= _LAG_T_STOP:
            break
        lag -= 1
    X, y = _adf_regression(x, lag, lag + 1)
    t_stat = float(_ols_t(X, y)[1])
    crit = mackinnon_crit_5pct(X.shape[0])
    return AdfResult(t_stat, crit, bool(t_stat < crit), lag, X.shape[0])


def stationarize(x: np.ndarray, max_lag: int = 4) -> tuple[np.ndarray, bool]:
    """First-difference ``x`` when ADF fails to reject a unit root.

    Returns the (possibly differenced, NaN-prefixed) series and whether it was
    differenced.  Too-short series pass through unchanged.
    """
    x = np.asarray(x, dtype=float)
    res = adf_test(x, max_lag=max_lag)
    if res is None:
        log.warning("series too short for the ADF safeguard; used as is")
        return x.copy(), False
    if res.reject:
        return x.copy(), False
    out = np.full_like(x, np.nan)
    out[1:] = np.diff(x)
    return out, True


def longest_common_run(*series: np.ndarray) -> slice:
    """Longest contiguous index run where every series is observed."""
    ok = np.ones(series[0].shape[0], dtype=bool)
    for s in series:
        ok &= ~np.isnan(s)
    best = (0, 0)
    start = None
    for i, v in enumerate(np.append(ok, False)):
        if v and start is None:
            start = i
        elif not v and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    return slice(*best)


def nan_safe_std(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(x.std()) if x.size else math.nan
