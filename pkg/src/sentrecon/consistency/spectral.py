"""Welch squared coherence, cross-spectral phase and band summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import csd, welch

from .transforms import longest_common_run

COHERENCE_FLOOR = 0.1
BANDS = ("short", "mid", "long")


def band_of(freq: float) -> str | None:
    """Short: period <= 4; mid: 4 < period <= 13; long: period > 13; None at f = 0."""
    if freq <= 0:
        return None
    period = 1.0 / freq
    if period <= 4.0:
        return "short"
    if period <= 13.0:
        return "mid"
    return "long"


@dataclass
class SpectralResult:
    freqs: np.ndarray
    coherence: np.ndarray
    phase: np.ndarray
    tau: np.ndarray  # NaN where not reported
    band_coherence: dict[str, float] = field(default_factory=dict)
    band_tau: dict[str, float] = field(default_factory=dict)
    c_mid: float = math.nan

    def tau_at(self, freq: float) -> float:
        """Lead estimate at the grid frequency nearest ``freq`` (ignores the floor)."""
        i = int(np.argmin(np.abs(self.freqs - freq)))
        f = self.freqs[i]
        return float(self.phase[i] / (2 * math.pi * f)) if f > 0 else math.nan


def welch_coherence(
    s_stat: np.ndarray, y_stat: np.ndarray, nseg: int = 52, floor: float = COHERENCE_FLOOR
) -> SpectralResult:
    """Hann-windowed Welch estimate with 50% overlap.

    ``phase > 0`` (and ``tau > 0``) means sentiment leads price.  ``tau`` is
    reported only where coherence exceeds ``floor`` and ``|tau| < 1/(2f)``.
    Long-band values are descriptive only: few cycles fit in the sample.
    """
    s = np.asarray(s_stat, dtype=float)
    y = np.asarray(y_stat, dtype=float)
    run = longest_common_run(s, y)
    s, y = s[run], y[run]
    if s.shape[0] < nseg:
        raise ValueError(f"series of length {s.shape[0]} shorter than one segment ({nseg})")
    kw = dict(fs=1.0, window="hann", nperseg=nseg, noverlap=nseg // 2, detrend="constant")
    f, pxy = csd(s, y, **kw)
    _, pxx = welch(s, **kw)
    _, pyy = welch(y, **kw)
    with np.errstate(divide="ignore", invalid="ignore"):
        coh = np.where((pxx > 0) & (pyy > 0), np.abs(pxy) ** 2 / (pxx * pyy), 0.0)
    coh = np.clip(coh, 0.0, 1.0)
    # scipy's csd is E[conj(S) Y]; a price lagging sentiment by d gives angle -2 pi f d
    phase = -np.angle(pxy)
    tau = np.full_like(f, np.nan)
    pos = f > 0
    tau[pos] = phase[pos] / (2 * math.pi * f[pos])
    keep = pos & (coh > floor) & (np.abs(tau) < 1.0 / (2 * np.where(pos, f, 1.0)))
    tau = np.where(keep, tau, np.nan)

    res = SpectralResult(f, coh, phase, tau)
    labels = np.array([band_of(x) for x in f], dtype=object)
    sums = {}
    for b in BANDS:
        m = labels == b
        sums[b] = float(coh[m].sum())
        res.band_coherence[b] = float(coh[m].mean()) if m.any() else math.nan
        tb = tau[m]
        tb = tb[~np.isnan(tb)]
        res.band_tau[b] = float(tb.mean()) if tb.size else math.nan
    total = sum(sums.values())
    res.c_mid = sums["mid"] / total if total > 0 else math.nan
    return res
