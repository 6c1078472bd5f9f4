"""Cross-entity aggregation: Fisher r-to-z, combined p-values and the composite score."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaincc

RHO_CLAMP = 1.0 - 1e-12
P_FLOOR = 1e-300

WEIGHT_FAMILIES = {
    "n": lambda n: n,
    "sqrt": np.sqrt,
    "log1p": np.log1p,
    "n2": lambda n: n**2,
}

SCORE_WEIGHTS = {"ccf_rho": 0.4, "granger_sp_pct": 0.3, "mid_coh": 0.2, "dtw_mean": 0.1}


def fisher_aggregate(
    rhos: Sequence[float],
    method: str = "weighted",
    weights: str = "n2",
    counts: Sequence[float] | None = None,
    diag: Counter | None = None,
) -> float:
    """Average correlations in arctanh space and map back with tanh.

    ``method`` is ``mean``, ``weighted`` (``weights`` in n / sqrt / log1p / n2
    applied to ``counts``) or ``median``.
    """
    r = np.asarray(rhos, dtype=float)
    if r.size == 0:
        raise ValueError("no correlations to aggregate")
    if np.any(np.abs(r) > RHO_CLAMP) and diag is not None:
        diag["fisher_clamped"] += int(np.count_nonzero(np.abs(r) > RHO_CLAMP))
    z = np.arctanh(np.clip(r, -RHO_CLAMP, RHO_CLAMP))
    if method == "mean":
        zbar = z.mean()
    elif method == "median":
        zbar = np.median(z)
    elif method == "weighted":
        if counts is None:
            raise ValueError("weighted aggregation needs per-entity counts")
        w = WEIGHT_FAMILIES[weights](np.asarray(counts, dtype=float))
        if not w.sum() > 0:
            raise ValueError("aggregation weights sum to zero")
        zbar = float(np.dot(w, z) / w.sum())
    else:
        raise ValueError(f"unknown Fisher aggregation method {method!r}")
    return float(np.tanh(zbar))


def fisher_combined_pvalue(pvals: Sequence[float]) -> float:
    """Fisher's method: ``-2 sum log p`` against chi-square with ``2m`` d.o.f."""
    p = np.asarray(pvals, dtype=float)
    if p.size == 0:
        raise ValueError("no p-values to combine")
    if np.any((p <= 0) & (p != 0)) or np.any(p > 1):
        raise ValueError("p-values must lie in (0, 1]")
    stat = -2.0 * float(np.sum(np.log(np.maximum(p, P_FLOOR))))
    # chi2(2m) survival = regularised upper incomplete gamma Q(m, stat/2)
    return float(gammaincc(p.size, stat / 2.0))


@dataclass(frozen=True)
class ConsistencyRow:
    config_id: str
    n_entities: int
    ccf_lag: int
    ccf_rho: float
    granger_sp_pct: float
    mid_coh: float
    dtw_mean: float
    score: float = math.nan

    COLUMNS = ("config_id", "n_entities", "ccf_lag", "ccf_rho", "granger_sp_pct", "mid_coh", "dtw_mean", "score")

    def values(self) -> tuple:
        return tuple(getattr(self, c) for c in self.COLUMNS)


def zscores(col: np.ndarray) -> np.ndarray:
    """Population z-scores; a constant (or all-missing) column maps to zeros."""
    col = np.asarray(col, dtype=float)
    ok = ~np.isnan(col)
    out = np.zeros_like(col)
    if ok.sum() < 2:
        return out
    sd = col[ok].std()
    if not sd > 0:
        return out
    out[ok] = (col[ok] - col[ok].mean()) / sd
    return out


def composite_score(rows: Sequence[ConsistencyRow]) -> list[ConsistencyRow]:
    """Attach the 0.4/0.3/0.2/0.1 weighted sum of z-scored metrics to each row.

    Missing metric values contribute a z-score of 0.
    """
    rows = list(rows)
    if not rows:
        return []
    total = np.zeros(len(rows))
    for name, w in SCORE_WEIGHTS.items():
        total += w * zscores(np.array([getattr(r, name) for r in rows], dtype=float))
    return [replace(r, score=float(s)) for r, s in zip(rows, total)]


def rank_rows(rows: Sequence[ConsistencyRow]) -> list[ConsistencyRow]:
    return sorted(rows, key=lambda r: (-r.score if not math.isnan(r.score) else math.inf, r.config_id))


def rows_to_csv(rows: Sequence[ConsistencyRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ConsistencyRow.COLUMNS)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r.values()])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ConsistencyRow]:
    out = []
    types = {f.name: f.type for f in fields(ConsistencyRow)}
    for rec in csv.DictReader(io.StringIO(text)):
        kw = {}
        for k, v in rec.items():
            t = types[k]
            kw[k] = v if t == "str" else (int(v) if t == "int" else float(v))
        out.append(ConsistencyRow(**kw))
    return out
