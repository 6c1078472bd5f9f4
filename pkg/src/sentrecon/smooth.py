"""Stage 3: strictly causal smoothers.

Each smoother is a single forward pass whose output at bin ``k`` depends only
on inputs at bins ``<= k``.  Missing bins (a leading prefix, or interior gaps
when filling is disabled) produce missing output; Kalman variants still run
the predict step through them so uncertainty grows across the gap.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .core import GridSeries, Stage

R_TILDE_CAP = 1e12

METHODS = (
    "none",
    "ewma",
    "weighted_ewma",
    "kalman",
    "kalman_arctanh",
    "kalman_count",
    "kalman_arctanh_count",
    "beta_binomial",
)

# Result-table names mapped onto implemented methods; editable per project.
ALIASES: dict[str, str] = {
    "ema": "ewma",
    "weighted_ema": "weighted_ewma",
    "simple_kalman": "kalman",
    "weighted_kalman": "kalman_count",
    "adaptive_count_kalman": "kalman_count",
    "weighted_arctanh_kalman": "kalman_arctanh_count",
    "beta_binomial_smoother": "beta_binomial",
}

BOUNDED = {"none", "ewma", "weighted_ewma", "kalman_arctanh", "kalman_arctanh_count", "beta_binomial"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SmootherConfig:
    method: str = "none"
    alpha: float = 0.3
    q: float = 0.005
    r: float = 0.1
    r_tilde: float = 0.1
    p1: float = 1.0
    t_floor: float = 1.0
    edge_eps: float = 1e-6
    delta: float = 0.9

    def __post_init__(self) -> None:
        m = ALIASES.get(self.method, self.method)
        object.__setattr__(self, "method", m)
        if m not in METHODS:
            raise ConfigError(f"unknown smoother {self.method!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError("delta must lie in (0, 1]")
        for name in ("q", "r", "r_tilde", "p1", "t_floor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.edge_eps < 1.0:
            raise ConfigError("edge_eps must lie in (0, 1)")

    @property
    def bounded(self) -> bool:
        return self.method in BOUNDED

    @property
    def label(self) -> str:
        m = self.method
        if m in ("ewma", "weighted_ewma"):
            return f"{m}(alpha={self.alpha:g})"
        if m == "kalman":
            return f"kalman(q={self.q:g},r={self.r:g})"
        if m == "kalman_arctanh":
            return f"kalman_arctanh(q={self.q:g},r={self.r_tilde:g})"
        if m in ("kalman_count", "kalman_arctanh_count"):
            return f"{m}(q={self.q:g})"
        if m == "beta_binomial":
            return f"beta_binomial(delta={self.delta:g})"
        return m

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# single steps
# --------------------------------------------------------------------------


def ewma_step(prev: float, x: float, alpha: float) -> float:
    return alpha * x + (1.0 - alpha) * prev


def weighted_ewma_gain(alpha: float, t: float) -> float:
    """Per-step gain that reduces to ``alpha`` at unit coverage."""
    return alpha * t / (alpha * t + (1.0 - alpha)) if alpha < 1.0 else 1.0


def kalman_step(m: float, P: float, z: float, q: float, R: float) -> tuple[float, float]:
    """Random-walk predict + update; ``z`` is already in state space."""
    if not R > 0:
        raise ValueError(f"observation variance must be positive, got {R}")
    P_pred = P + q
    K = P_pred / (P_pred + R)
    return m + K * (z - m), (1.0 - K) * P_pred


def beta_binomial_step(
    a_prev: float, b_prev: float, x: float, t: float, delta: float
) -> tuple[float, float, float]:
    p = (x + 1.0) / 2.0
    a = delta * a_prev + p * t
    b = delta * b_prev + (1.0 - p) * t
    tot = a + b
    return a, b, (2.0 * a / tot - 1.0) if tot > 0 else math.nan


def _clamp_edge(x: float, eps: float, diag: Counter | None) -> float:
    lim = 1.0 - eps
    if abs(x) > lim:
        if diag is not None:
            diag["arctanh_clamped"] += 1
        return math.copysign(lim, x)
    return x


# --------------------------------------------------------------------------
# full passes
# --------------------------------------------------------------------------


def _ewma(x: np.ndarray, t: np.ndarray, cfg: SmootherConfig, weighted: bool) -> np.ndarray:
    out = np.full_like(x, np.nan)
    state = math.nan
    for k, xk in enumerate(x):
        if math.isnan(xk):
            continue
        if math.isnan(state):
            state = xk
        else:
            a = weighted_ewma_gain(cfg.alpha, max(t[k], cfg.t_floor)) if weighted else cfg.alpha
            state = ewma_step(state, xk, a)
        out[k] = state
    return out


def _kalman(x: np.ndarray, t: np.ndarray, cfg: SmootherConfig, diag: Counter | None) -> np.ndarray:
    method = cfg.method
    arctanh = method in ("kalman_arctanh", "kalman_arctanh_count")
    out = np.full_like(x, np.nan)
    m = math.nan
    P = cfg.p1
    for k, xk in enumerate(x):
        if math.isnan(xk):
            if not math.isnan(m):
                P += cfg.q
            continue
        tk = max(float(t[k]), cfg.t_floor)
        if arctanh:
            xc = _clamp_edge(xk, cfg.edge_eps, diag)
            z = math.atanh(xc)
            if method == "kalman_arctanh":
                R = cfg.r_tilde
            else:
                R = min(1.0 / (tk * (1.0 - xc * xc)), R_TILDE_CAP)
        else:
            z = xk
            if method == "kalman":
                R = cfg.r
            else:
                xc = _clamp_edge(xk, cfg.edge_eps, diag)
                R = (1.0 - xc * xc) / tk
        if math.isnan(m):
            m, P = z, cfg.p1
        else:
            m, P = kalman_step(m, P, z, cfg.q, R)
        out[k] = math.tanh(m) if arctanh else m
    return out


def _beta_binomial(x: np.ndarray, t: np.ndarray, cfg: SmootherConfig, diag: Counter | None) -> np.ndarray:
    out = np.full_like(x, np.nan)
    a = b = 0.0
    prev = math.nan
    started = False
    for k, xk in enumerate(x):
        if math.isnan(xk):
            continue
        tk = float(t[k])
        if not started:
            a, b, y = beta_binomial_step(0.0, 0.0, xk, tk, 1.0)
            started = True
        else:
            a, b, y = beta_binomial_step(a, b, xk, tk, cfg.delta)
        if math.isnan(y):
            if diag is not None:
                diag["beta_zero_mass"] += 1
            y = prev if not math.isnan(prev) else xk
        out[k] = y
        prev = y
    return out


def smooth_values(
    x: np.ndarray, counts: np.ndarray, cfg: SmootherConfig, diag: Counter | None = None
) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    t = np.asarray(counts, dtype=float)
    if cfg.method == "none":
        return x.copy()
    if cfg.method in ("ewma", "weighted_ewma"):
        return _ewma(x, t, cfg, weighted=cfg.method == "weighted_ewma")
    if cfg.method == "beta_binomial":
        return _beta_binomial(x, t, cfg, diag)
    return _kalman(x, t, cfg, diag)


SmootherFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def smooth(
    series: GridSeries,
    cfg: SmootherConfig = SmootherConfig(),
    diag: Counter | None = None,
    override: SmootherFn | None = None,
) -> GridSeries:
    """Apply the configured smoother to a filled-stage series.

    ``override`` replaces the smoother with an arbitrary callable; it exists
    so the causality harness can be checked against a deliberately acausal
    double.
    """
    if series.stage is not Stage.FILLED:
        raise ValueError(f"smooth expects a filled series, got {series.stage.value}")
    if override is not None:
        return series.with_values(
            override(series.values, series.effective_counts), Stage.SMOOTHED, bounded=False
        )
    out = smooth_values(series.values, series.effective_counts, cfg, diag)
    return series.with_values(out, Stage.SMOOTHED, bounded=cfg.bounded)


def centered_moving_average(x: np.ndarray, counts: np.ndarray | None = None, half_width: int = 2) -> np.ndarray:
    """Two-sided moving average; acausal on purpose (harness self-test only)."""
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, np.nan)
    n = x.shape[0]
    for k in range(n):
        if math.isnan(x[k]):
            continue
        w = x[max(0, k - half_width): min(n, k + half_width + 1)]
        out[k] = np.nanmean(w)
    return out
