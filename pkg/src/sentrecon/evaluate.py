"""Label-free diagnostics and the cross-sectional reporting block."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import GridSeries
from .fill import last_observed_index

LAGS = (-2, -1, 0, 1, 2)
MIN_OVERLAP = 8


def _values(x: GridSeries | np.ndarray) -> np.ndarray:
    return x.values if isinstance(x, GridSeries) else np.asarray(x, dtype=float)


def total_variation(series: GridSeries | np.ndarray) -> float:
    """Sum of absolute differences over consecutive non-missing pairs.

    Pairs that straddle a missing bin are skipped.  Returns ``NaN`` when fewer
    than two values are present.
    """
    v = _values(series)
    if np.count_nonzero(~np.isnan(v)) < 2:
        return math.nan
    d = np.abs(np.diff(v))
    return float(np.sum(d[~np.isnan(d)]))


def tv_ratios(tv_a: float, tv_f: float, tv_s: float) -> tuple[float, float, float]:
    """(F/A, S/F, S/A); a ratio with a zero or undefined denominator is ``NaN``."""

    def ratio(num: float, den: float) -> float:
        if not (den > 0) or math.isnan(num):
            return math.nan
        return num / den

    return ratio(tv_f, tv_a), ratio(tv_s, tv_f), ratio(tv_s, tv_a)


def gap_drift(aggregated: GridSeries | np.ndarray, filled: GridSeries | np.ndarray) -> float:
    """Mean |filled - held value| over missing bins that follow an observation."""
    a = _values(aggregated)
    f = _values(filled)
    if a.shape != f.shape:
        raise ValueError("aggregated and filled series must share a grid")
    kstar = last_observed_index(a)
    gap = np.isnan(a) & (kstar >= 0)
    if not gap.any():
        return math.nan
    k = np.flatnonzero(gap)
    dev = np.abs(f[k] - a[kstar[k]])
    # an unfilled gap bin has no departure to measure
    dev = dev[~np.isnan(dev)]
    return float(dev.mean()) if dev.size else math.nan


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    den = math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    if not den > 0:
        return math.nan
    return float(np.clip(np.dot(xc, yc) / den, -1.0, 1.0))


def lagged_correlation(f: np.ndarray, s: np.ndarray, lag: int, min_overlap: int = MIN_OVERLAP) -> float:
    """Pearson correlation of ``f(k)`` with ``s(k + lag)`` on jointly observed bins."""
    n = f.shape[0]
    if lag >= 0:
        a, b = f[: n - lag], s[lag:]
    else:
        a, b = f[-lag:], s[: n + lag]
    ok = ~np.isnan(a) & ~np.isnan(b)
    if np.count_nonzero(ok) < min_overlap:
        return math.nan
    return _pearson(a[ok], b[ok])


def lag_proxy(
    filled: GridSeries | np.ndarray, smoothed: GridSeries | np.ndarray, min_overlap: int = MIN_OVERLAP
) -> tuple[float, int]:
    """Peak small-lag correlation and its absolute lag.

    Ties go to the smaller ``|lag|`` and then to the negative lag.  Returns
    ``(nan, -1)`` when no lag yields a defined correlation.
    """
    f, s = _values(filled), _values(smoothed)
    ok0 = ~np.isnan(f) & ~np.isnan(s)
    if np.count_nonzero(ok0) < min_overlap:
        return math.nan, -1
    best_rho, best_lag = -math.inf, None
    for lag in sorted(LAGS, key=lambda l: (abs(l), l)):
        rho = lagged_correlation(f, s, lag, min_overlap)
        if math.isnan(rho):
            continue
        if rho > best_rho + 1e-12:
            best_rho, best_lag = rho, lag
    if best_lag is None:
        return math.nan, -1
    return best_rho, abs(best_lag)


# --------------------------------------------------------------------------
# reporting block
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSummary:
    median: float
    iqr: float
    mean: float
    std: float
    q10: float
    q90: float
    n_entities: int
    n_excluded: int

    FIELDS = ("median", "iqr", "mean", "std", "q10", "q90")

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in self.FIELDS)

    def minus(self, other: "MetricSummary") -> tuple[float, ...]:
        return tuple(a - b for a, b in zip(self.row(), other.row()))


def cross_section_summary(values: Iterable[float]) -> MetricSummary:
    """Median/IQR, mean/std and q10/q90 over the defined per-entity values.

    Quantiles use linear interpolation between order statistics and ``std``
    is the population standard deviation.  ``NaN`` entries count as excluded.
    """
    arr = np.asarray(list(values), dtype=float)
    keep = arr[np.isfinite(arr)]
    if keep.size == 0:
        raise ValueError("no defined values to summarise")
    q10, q25, q50, q75, q90 = np.quantile(keep, [0.1, 0.25, 0.5, 0.75, 0.9], method="linear")
    return MetricSummary(
        median=float(q50),
        iqr=float(q75 - q25),
        mean=float(keep.mean()),
        std=float(keep.std()),
        q10=float(q10),
        q90=float(q90),
        n_entities=int(keep.size),
        n_excluded=int(arr.size - keep.size),
    )


def format_table(rows: Sequence[tuple[str, Sequence[float]]], header: Sequence[str] | None = None) -> str:
    """Aligned text table: a label column plus the six reporting-block columns."""
    header = list(header or ("", *MetricSummary.FIELDS))
    body = [[label, *(f"{v:.4f}" if np.isfinite(v) else "nan" for v in vals)] for label, vals in rows]
    widths = [max(len(str(r[i])) for r in [header, *body]) for i in range(len(header))]
    lines = []
    for r in [header, *body]:
        cells = [str(r[0]).ljust(widths[0])] + [str(c).rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


@dataclass
class EntityMetrics:
    entity_id: str
    tv_aggregated: float
    tv_filled: float
    tv_smoothed: float
    ratio_fa: float
    ratio_sf: float
    ratio_sa: float
    gap_drift: float
    rho_star: float
    abs_lag: int


def entity_metrics(agg: GridSeries, filled: GridSeries, smoothed: GridSeries) -> EntityMetrics:
    tva, tvf, tvs = total_variation(agg), total_variation(filled), total_variation(smoothed)
    rho, lag = lag_proxy(filled, smoothed)
    return EntityMetrics(
        agg.entity_id, tva, tvf, tvs, *tv_ratios(tva, tvf, tvs), gap_drift(agg, filled), rho, lag
    )


def summarise_metrics(per_entity: Sequence[EntityMetrics]) -> dict[str, MetricSummary | None]:
    out: dict[str, MetricSummary | None] = {}
    for name in (
        "tv_aggregated", "tv_filled", "tv_smoothed", "ratio_fa", "ratio_sf", "ratio_sa",
        "gap_drift", "rho_star", "abs_lag",
    ):
        vals = [getattr(m, name) for m in per_entity]
        if name == "abs_lag":
            vals = [float(v) if v >= 0 else math.nan for v in vals]
        try:
            out[name] = cross_section_summary(vals)
        except ValueError:
            out[name] = None
    return out


def summaries_to_json(summaries: dict[str, MetricSummary | None]) -> str:
    payload = {k: (v.to_dict() if v is not None else None) for k, v in summaries.items()}
    return json.dumps(payload, indent=2, sort_keys=True)
