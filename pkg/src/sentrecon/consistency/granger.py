"""Rolling bivariate Granger causality with SSR-based F tests."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.stats import f as f_dist

SIGNIFICANCE = 0.05


@dataclass(frozen=True)
class GrangerWindow:
    end: int
    n_obs: int
    f_sy: float
    f_ys: float
    p_sy: float
    p_ys: float

    @property
    def delta_g(self) -> float:
        """Net log F-ratio; positive when sentiment predicts price more strongly."""
        return math.log(max(self.f_sy, 1e-300)) - math.log(max(self.f_ys, 1e-300))

    @property
    def significant_sy(self) -> bool:
        return self.p_sy < SIGNIFICANCE

    @property
    def significant_ys(self) -> bool:
        return self.p_ys < SIGNIFICANCE


def _lag_design(target: np.ndarray, other: np.ndarray, lag: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = target.shape[0]
    rows = np.arange(lag, n)
    Yt = target[rows]
    own = np.column_stack([target[rows - j] for j in range(1, lag + 1)])
    cross = np.column_stack([other[rows - j] for j in range(1, lag + 1)])
    ok = ~np.isnan(Yt) & ~np.isnan(own).any(axis=1) & ~np.isnan(cross).any(axis=1)
    return Yt[ok], own[ok], cross[ok]


def _ssr(X: np.ndarray, y: np.ndarray) -> float:
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    return float(r @ r)


def granger_f(target: np.ndarray, other: np.ndarray, lag: int) -> tuple[float, float, int]:
    """F test that ``other``'s lags add nothing to an AR(lag) for ``target``.

    Returns ``(F, p, n_rows)``.  Raises ``np.linalg.LinAlgError`` when the
    unrestricted regressor matrix is rank deficient.
    """
    y, own, cross = _lag_design(np.asarray(target, float), np.asarray(other, float), lag)
    n = y.shape[0]
    ones = np.ones((n, 1))
    Xu = np.hstack([ones, own, cross])
    Xr = np.hstack([ones, own])
    df2 = n - Xu.shape[1]
    if df2 <= 0 or np.linalg.matrix_rank(Xu) < Xu.shape[1]:
        raise np.linalg.LinAlgError("singular Granger regressor matrix")
    ssr_u = _ssr(Xu, y)
    ssr_r = _ssr(Xr, y)
    if not ssr_u > 0:
        raise np.linalg.LinAlgError("perfect fit in Granger regression")
    F = max((ssr_r - ssr_u) / lag / (ssr_u / df2), 0.0)
    return F, float(f_dist.sf(F, lag, df2)), n


def var_aic_order(s: np.ndarray, y: np.ndarray, max_lag: int = 8) -> int:
    """VAR lag order minimising ``log det(Sigma) + 2 (k^2 l + k) / T`` on a common sample."""
    Z = np.column_stack([s, y]).astype(float)
    ok = ~np.isnan(Z).any(axis=1)
    Z = Z[ok]
    T = Z.shape[0] - max_lag
    if T <= 2 * max_lag + 2:
        raise ValueError("series too short for VAR order selection")
    best, best_aic = 1, math.inf
    for lag in range(1, max_lag + 1):
        rows = np.arange(max_lag, Z.shape[0])
        X = np.hstack([np.ones((T, 1))] + [Z[rows - j] for j in range(1, lag + 1)])
        B, *_ = np.linalg.lstsq(X, Z[rows], rcond=None)
        E = Z[rows] - X @ B
        sign, logdet = np.linalg.slogdet(E.T @ E / T)
        if sign <= 0:
            continue
        aic = logdet + 2.0 * (4 * lag + 2) / T
        if aic < best_aic:
            best, best_aic = lag, aic
    return best


def rolling_granger(
    s_stat: np.ndarray,
    y_stat: np.ndarray,
    window: int = 52,
    step: int = 4,
    lag_order: int | None = 2,
    diag: Counter | None = None,
) -> list[GrangerWindow]:
    """Granger F tests in both directions over rolling windows.

    With ``lag_order=None`` the order is chosen once on the full sample by
    VAR AIC.  Windows with fewer than ``max(0.8 window, 4 lag + 10)`` jointly
    observed points are excluded, as are singular windows.
    """
    s = np.asarray(s_stat, dtype=float)
    y = np.asarray(y_stat, dtype=float)
    if s.shape != y.shape:
        raise ValueError("series must be aligned")
    lag = lag_order if lag_order is not None else var_aic_order(s, y)
    floor = max(0.8 * window, 4 * lag + 10)
    out = []
    for end in range(window - 1, s.shape[0], step):
        ws, wy = s[end - window + 1: end + 1], y[end - window + 1: end + 1]
        valid = int(np.count_nonzero(~np.isnan(ws) & ~np.isnan(wy)))
        if valid < floor:
            if diag is not None:
                diag["granger_short_windows"] += 1
            continue
        try:
            f_sy, p_sy, n = granger_f(wy, ws, lag)
            f_ys, p_ys, _ = granger_f(ws, wy, lag)
        except np.linalg.LinAlgError:
            if diag is not None:
                diag["granger_singular_windows"] += 1
            continue
        out.append(GrangerWindow(end, n, f_sy, f_ys, p_sy, p_ys))
    return out


def significant_share(windows: list[GrangerWindow]) -> float:
    """Fraction of windows with significant sentiment-to-price causality."""
    if not windows:
        return math.nan
    return sum(w.significant_sy for w in windows) / len(windows)
