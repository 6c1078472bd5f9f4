"""ARMA(p, q) by conditional sum of squares with AIC order selection.

Each candidate is initialised by Hannan-Rissanen (a long autoregression
supplies innovation estimates, then one linear regression gives starting
coefficients) and refined by damped Gauss-Newton on the CSS objective.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

log = logging.getLogger(__name__)

MAX_ITER = 200
REL_TOL = 1e-8
BOUNDARY_MARGIN = 0.05  # minimum MA root modulus is 1 + this


@dataclass(frozen=True)
class ArmaOrder:
    p: int
    q: int

    def __post_init__(self) -> None:
        if not (0 <= self.p <= 4 and 0 <= self.q <= 2):
            raise ValueError(f"order ({self.p}, {self.q}) outside p<=4, q<=2")


@dataclass
class ArmaFit:
    order: ArmaOrder
    phi: np.ndarray
    theta: np.ndarray
    ssr: float
    aic: float
    converged: bool
    resid: np.ndarray  # aligned with the input, NaN before index p
    mean: float = 0.0


@dataclass
class ArmaSelection:
    best: ArmaFit
    aic_table: dict[tuple[int, int], float] = field(default_factory=dict)
    diagnostics: Counter = field(default_factory=Counter)

    @property
    def order(self) -> ArmaOrder:
        return self.best.order


def css_residuals(y: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Innovations for ``t >= p`` with pre-sample innovations set to zero."""
    p = phi.shape[0]
    n = y.shape[0]
    a = y[p:].copy()
    for i in range(1, p + 1):
        a -= phi[i - 1] * y[p - i: n - i]
    if theta.shape[0] == 0:
        return a
    return lfilter([1.0], np.r_[1.0, theta], a)


def _jacobian(y: np.ndarray, e: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    p, q = phi.shape[0], theta.shape[0]
    n = y.shape[0]
    den = np.r_[1.0, theta]
    cols = []
    for i in range(1, p + 1):
        cols.append(lfilter([1.0], den, -y[p - i: n - i]))
    for j in range(1, q + 1):
        lagged = np.r_[np.zeros(j), e[:-j]] if e.shape[0] > j else np.zeros_like(e)
        cols.append(lfilter([1.0], den, -lagged))
    return np.column_stack(cols) if cols else np.zeros((e.shape[0], 0))


def _min_ma_root(theta: np.ndarray) -> float:
    if theta.shape[0] == 0:
        return math.inf
    return float(np.min(np.abs(np.roots(np.r_[theta[::-1], 1.0]))))


def _invertible(theta: np.ndarray, margin: float = 1e-6) -> bool:
    return _min_ma_root(theta) > 1.0 + margin


def _hannan_rissanen(y: np.ndarray, p: int, q: int) -> np.ndarray:
    n = y.shape[0]
    if q == 0:
        if p == 0:
            return np.zeros(0)
        X = np.column_stack([y[p - i: n - i] for i in range(1, p + 1)])
        beta, *_ = np.linalg.lstsq(X, y[p:], rcond=None)
        return beta
    m = min(max(p + q, int(math.ceil(math.log(n) ** 1.5))), n // 4)
    X = np.column_stack([y[m - i: n - i] for i in range(1, m + 1)])
    ar, *_ = np.linalg.lstsq(X, y[m:], rcond=None)
    ehat = np.zeros(n)
    ehat[m:] = y[m:] - X @ ar
    s = m + max(p, q)
    cols = [y[s - i: n - i] for i in range(1, p + 1)] + [ehat[s - j: n - j] for j in range(1, q + 1)]
    beta, *_ = np.linalg.lstsq(np.column_stack(cols), y[s:], rcond=None)
    theta = beta[p:]
    if not _invertible(theta):
        # reflect MA roots inside the unit circle to get an invertible start
        roots = np.roots(np.r_[theta[::-1], 1.0])
        roots = np.where(np.abs(roots) < 1.0, 1.0 / np.conj(roots), roots) * 1.01
        poly = np.real(np.poly(roots))
        poly = poly / poly[-1]
        theta = poly[::-1][1:]
    return np.r_[beta[:p], theta]


def fit_arma(
    y: np.ndarray, p: int, q: int, sample_start: int | None = None, margin: float = 1e-6
) -> ArmaFit:
    """CSS fit of a zero-mean ARMA(p, q).

    The objective is the residual sum of squares over ``t >= sample_start``
    (default ``p``), so that candidates of different AR order can share one
    estimation sample.  A fit whose smallest MA root modulus is not above
    ``1 + margin`` is reported as non-converged.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    start = p if sample_start is None else max(sample_start, p)
    off = start - p  # residual index where the objective starts

    def ssr_of(beta: np.ndarray) -> tuple[float, np.ndarray]:
        e = css_residuals(y, beta[:p], beta[p:])
        tail = e[off:]
        v = float(tail @ tail)
        return (v if math.isfinite(v) else math.inf), e

    beta = _hannan_rissanen(y, p, q) if p + q else np.zeros(0)
    ssr, e = ssr_of(beta)
    converged = p + q == 0
    for _ in range(MAX_ITER if p + q else 0):
        J = _jacobian(y, e, beta[:p], beta[p:])[off:]
        step, *_ = np.linalg.lstsq(J, -e[off:], rcond=None)
        lam = 1.0
        improved = False
        for _ in range(30):
            cand = beta + lam * step
            if _invertible(cand[p:]):
                s_new, e_new = ssr_of(cand)
                if s_new <= ssr:
                    improved = True
                    break
            lam *= 0.5
        if not improved:
            converged = True  # no descent direction left: stationary point
            break
        rel = (ssr - s_new) / max(ssr, 1e-300)
        beta, ssr, e = cand, s_new, e_new
        if rel < REL_TOL:
            converged = True
            break
    phi, theta = beta[:p], beta[p:]
    ok = converged and math.isfinite(ssr) and _invertible(theta, margin)
    n_eff = n - start
    aic = n_eff * math.log(max(ssr, 1e-300) / n_eff) + 2 * (p + q + 1) if ok else math.inf
    resid = np.full(n, np.nan)
    resid[p:] = e
    return ArmaFit(ArmaOrder(p, q), phi, theta, ssr, aic, ok, resid)


def fit_arma_aic(y: np.ndarray, p_max: int = 4, q_max: int = 2, min_obs: int = 30) -> ArmaSelection:
    """Fit every (p, q) on the grid and keep the minimum-AIC model.

    The series is demeaned first.  Cells that fail to converge are skipped;
    if none converge the white-noise model is returned.
    """
    y = np.asarray(y, dtype=float)
    if np.isnan(y).any():
        raise ValueError("ARMA input must not contain missing values")
    if y.shape[0] < min_obs:
        raise ValueError(f"need at least {min_obs} observations, got {y.shape[0]}")
    mu = float(y.mean())
    yc = y - mu
    sel = ArmaSelection(best=None)  # type: ignore[arg-type]
    best: ArmaFit | None = None
    for p in range(p_max + 1):
        for q in range(q_max + 1):
            try:
                # CSS piles estimates onto the unit circle when an MA factor
                # is spurious; such boundary fits do not compete
                fit = fit_arma(yc, p, q, sample_start=p_max, margin=BOUNDARY_MARGIN)
            except (np.linalg.LinAlgError, ValueError):
                fit = None
            if fit is None or not fit.converged:
                sel.diagnostics["nonconverged_cells"] += 1
                continue
            sel.aic_table[(p, q)] = fit.aic
            if best is None or fit.aic < best.aic - 1e-12:
                best = fit
    if best is None:
        log.warning("no ARMA cell converged; falling back to white noise")
        best = ArmaFit(ArmaOrder(0, 0), np.zeros(0), np.zeros(0), float(yc @ yc), math.nan, False, yc.copy())
    best.mean = mu
    sel.best = best
    return sel


def fit_arma_order(y: np.ndarray, order: ArmaOrder) -> ArmaFit:
    """Refit a fixed order to another (demeaned) series; white noise on failure."""
    y = np.asarray(y, dtype=float)
    mu = float(y.mean())
    fit = fit_arma(y - mu, order.p, order.q)
    if not fit.converged:
        log.warning("matched-order ARMA%s fit failed; using demeaned series", (order.p, order.q))
        yc = y - mu
        fit = ArmaFit(order, np.zeros(order.p), np.zeros(order.q), float(yc @ yc), math.nan, False, yc.copy())
    fit.mean = mu
    return fit
