"""Matched-order prewhitening and the residual cross-correlation function."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .arma import ArmaOrder, fit_arma_aic, fit_arma_order
from .transforms import longest_common_run


@dataclass
class CcfResult:
    lags: np.ndarray
    rho: np.ndarray
    band: float
    n: int
    order: ArmaOrder | None = None

    @property
    def peak_lag(self) -> int:
        return int(self.lags[_peak_index(self.lags, self.rho)])

    @property
    def peak_rho(self) -> float:
        return float(self.rho[_peak_index(self.lags, self.rho)])

    def at(self, lag: int) -> float:
        return float(self.rho[int(np.flatnonzero(self.lags == lag)[0])])

    def pvalues(self) -> np.ndarray:
        """Two-sided normal-approximation p-values for each lag."""
        return 2.0 * norm.sf(np.abs(self.rho) * math.sqrt(self.n))


def _peak_index(lags: np.ndarray, rho: np.ndarray) -> int:
    """Largest correlation; ties go to the smaller |lag|, then the positive one."""
    best = None
    for i in sorted(range(lags.shape[0]), key=lambda i: (abs(lags[i]), -lags[i])):
        if np.isnan(rho[i]):
            continue
        if best is None or rho[i] > rho[best] + 1e-12:
            best = i
    if best is None:
        raise ValueError("cross-correlation undefined at every lag")
    return best


def prewhitened_ccf(s_resid: np.ndarray, y_resid: np.ndarray, kappa_max: int = 12, min_n: int = 20) -> CcfResult:
    """``rho(kappa) = sum_k S(k) Y(k + kappa) / (|S| |Y|)`` on aligned residuals.

    Positive ``kappa`` means sentiment leads.  Norms use every matched pair;
    shifted sums use only the overlapping part.
    """
    s = np.asarray(s_resid, dtype=float)
    y = np.asarray(y_resid, dtype=float)
    if s.shape != y.shape:
        raise ValueError("residual series must be aligned")
    ok = ~np.isnan(s) & ~np.isnan(y)
    n = int(np.count_nonzero(ok))
    if n < min_n:
        raise ValueError(f"need at least {min_n} matched residual pairs, got {n}")
    s0 = np.where(ok, s, 0.0)
    y0 = np.where(ok, y, 0.0)
    den = math.sqrt(float(s0 @ s0) * float(y0 @ y0))
    if not den > 0:
        raise ValueError("zero residual norm")
    lags = np.arange(-kappa_max, kappa_max + 1)
    rho = np.empty(lags.shape[0])
    N = s.shape[0]
    for i, kappa in enumerate(lags):
        if kappa >= 0:
            num = float(s0[: N - kappa] @ y0[kappa:])
        else:
            num = float(s0[-kappa:] @ y0[: N + kappa])
        rho[i] = num / den
    return CcfResult(lags, rho, 1.96 / math.sqrt(n), n)


def prewhiten_pair(
    s_stat: np.ndarray, y_stat: np.ndarray, p_max: int = 4, q_max: int = 2
) -> tuple[np.ndarray, np.ndarray, ArmaOrder]:
    """AIC-select an order on sentiment, fit the same order to price.

    Works on the longest run where both series are observed; returned
    residuals are aligned with the inputs (``NaN`` elsewhere).
    """
    s_stat = np.asarray(s_stat, dtype=float)
    y_stat = np.asarray(y_stat, dtype=float)
    run = longest_common_run(s_stat, y_stat)
    sel = fit_arma_aic(s_stat[run], p_max, q_max)
    yfit = fit_arma_order(y_stat[run], sel.order)
    s_res = np.full_like(s_stat, np.nan)
    y_res = np.full_like(y_stat, np.nan)
    s_res[run] = sel.best.resid
    y_res[run] = yfit.resid
    return s_res, y_res, sel.order


def entity_ccf(s_stat: np.ndarray, y_stat: np.ndarray, kappa_max: int = 12) -> CcfResult:
    s_res, y_res, order = prewhiten_pair(s_stat, y_stat)
    res = prewhitened_ccf(s_res, y_res, kappa_max)
    res.order = order
    return res
