"""Stage 2: causal completion of missing bins."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GridSeries, Stage


@dataclass(frozen=True)
class FillConfig:
    rule: str = "constant"  # none | constant | linear_decay
    horizon: int = 1

    def __post_init__(self) -> None:
        if self.rule not in ("none", "constant", "linear_decay"):
            raise ValueError(f"unknown fill rule {self.rule!r}")
        if self.rule == "linear_decay" and int(self.horizon) < 1:
            raise ValueError("linear decay horizon must be >= 1")

    @property
    def label(self) -> str:
        return f"linear_decay(H={self.horizon})" if self.rule == "linear_decay" else self.rule

    def staleness(self, delta: np.ndarray) -> np.ndarray:
        """Decay factor ``g(delta)``; ``g(0) == 1`` and ``g`` is nonincreasing."""
        delta = np.asarray(delta, dtype=float)
        if self.rule == "linear_decay":
            return np.maximum(0.0, 1.0 - delta / self.horizon)
        return np.ones_like(delta)


def last_observed_index(values: np.ndarray) -> np.ndarray:
    """Index of the last non-missing entry at or before each position (-1 if none)."""
    obs = ~np.isnan(values)
    idx = np.where(obs, np.arange(values.shape[0]), -1)
    return np.maximum.accumulate(idx) if idx.size else idx


def causal_fill(series: GridSeries, config: FillConfig = FillConfig()) -> GridSeries:
    """Forward-carry the last true observation scaled by the staleness factor.

    Elapsed time is always measured from the last *observed* bin, never from
    a filled one.  Bins before the first observation stay missing.
    """
    if series.stage is not Stage.AGGREGATED:
        raise ValueError(f"causal_fill expects an aggregated series, got {series.stage.value}")
    v = series.values
    if config.rule == "none":
        return series.with_values(v, Stage.FILLED)
    kstar = last_observed_index(v)
    out = v.copy()
    gap = np.isnan(v) & (kstar >= 0)
    if gap.any():
        k = np.flatnonzero(gap)
        out[k] = config.staleness(k - kstar[k]) * v[kstar[k]]
    return series.with_values(out, Stage.FILLED)
