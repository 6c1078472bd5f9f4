"""Stage 1: article weights, near-duplicate grouping and bin aggregation."""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import (
    SECONDS_PER_DAY,
    Article,
    GridSeries,
    GridSpec,
    InputError,
    ProbabilityTriple,
    Stage,
    assign_bins,
)

FALLBACK_DIM = 256
LOG3 = math.log(3.0)


class Uncertainty(str, Enum):
    NONE = "none"
    ENTROPY = "entropy"
    TOP2_MARGIN = "top2_margin"
    POLARITY = "polarity"


class Redundancy(str, Enum):
    NONE = "none"
    DEDUP = "dedup"
    CORROBORATE = "corroborate"


class Reducer(str, Enum):
    UNWEIGHTED_MEAN = "unweighted_mean"
    COUNT_WEIGHTED_MEAN = "count_weighted_mean"


@dataclass(frozen=True)
class Recency:
    """Exponential intra-bin recency decay.

    ``form`` records how the decay was specified so sweeps keep the original
    label: ``rate`` is a per-day rate, ``lambda`` and ``alpha`` are per-day
    retention factors and ``tau`` is a time constant in days.
    """

    form: str = "none"
    value: float = 0.0

    def __post_init__(self) -> None:
        if self.form not in ("none", "rate", "lambda", "tau", "alpha"):
            raise ValueError(f"unknown recency form {self.form!r}")
        if self.form == "rate" and self.value < 0:
            raise ValueError("recency rate must be >= 0")
        if self.form in ("lambda", "alpha") and not 0.0 < self.value <= 1.0:
            raise ValueError(f"recency {self.form} must lie in (0, 1]")
        if self.form == "tau" and not self.value > 0:
            raise ValueError("recency tau must be > 0")

    @property
    def gamma(self) -> float:
        if self.form == "none":
            return 0.0
        if self.form == "rate":
            return float(self.value)
        if self.form == "tau":
            return 1.0 / self.value
        return -math.log(self.value)

    @property
    def label(self) -> str:
        return "none" if self.form == "none" else f"{self.form}={self.value:g}"


@dataclass(frozen=True)
class WeightConfig:
    uncertainty: Uncertainty = Uncertainty.NONE
    redundancy: Redundancy = Redundancy.NONE
    dedup_alpha: float = 1.0
    recency: Recency = field(default_factory=Recency)
    similarity_threshold: float = 0.85
    grouping: str = "connected_components"
    fallback_embedder: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "uncertainty", Uncertainty(self.uncertainty))
        object.__setattr__(self, "redundancy", Redundancy(self.redundancy))
        if isinstance(self.recency, dict):
            object.__setattr__(self, "recency", Recency(**self.recency))
        if not 0.0 <= self.dedup_alpha <= 1.0:
            raise ValueError("dedup alpha must lie in [0, 1]")
        if not 0.0 < self.similarity_threshold < 1.0:
            raise ValueError("similarity threshold must lie in (0, 1)")
        if self.grouping != "connected_components":
            raise ValueError(f"unsupported grouping method {self.grouping!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["uncertainty"] = self.uncertainty.value
        d["redundancy"] = self.redundancy.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WeightConfig":
        d = dict(d)
        if isinstance(d.get("recency"), dict):
            d["recency"] = Recency(**d["recency"])
        return cls(**d)


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------


def _entropy_weights(P: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P), 0.0)
    u = -terms.sum(axis=1) / LOG3
    return np.clip(1.0 - u, 0.0, 1.0)


def uncertainty_weights(P: np.ndarray, mode: Uncertainty | str) -> np.ndarray:
    """Vectorised confidence weights for an ``(n, 3)`` array of (pos, neg, neu)."""
    mode = Uncertainty(mode)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if mode is Uncertainty.NONE:
        return np.ones(P.shape[0])
    if mode is Uncertainty.ENTROPY:
        return _entropy_weights(P)
    if mode is Uncertainty.TOP2_MARGIN:
        s = np.sort(P, axis=1)
        return np.clip(s[:, 2] - s[:, 1], 0.0, 1.0)
    pos, neg = P[:, 0], P[:, 1]
    conflict = (pos + neg) - (pos - neg) ** 2
    return np.clip(1.0 - conflict, 0.0, 1.0)


def uncertainty_weight(probs: ProbabilityTriple, mode: Uncertainty | str) -> float:
    return float(uncertainty_weights(probs.as_array()[None, :], mode)[0])


def redundancy_weight(n: int, mode: Redundancy | str, alpha: float = 1.0) -> float:
    """Weight for an article whose duplicate group has ``n`` members."""
    if n < 1:
        raise ValueError("group size must be >= 1")
    mode = Redundancy(mode)
    if mode is Redundancy.DEDUP:
        return float(n) ** (-alpha)
    if mode is Redundancy.CORROBORATE:
        return 1.0 if n == 1 else math.log(n)
    return 1.0


def recency_weight(t: float, bin_end: float, gamma: float) -> float:
    """``exp(-gamma * elapsed)`` with times in epoch seconds and gamma per day."""
    if t > bin_end:
        raise ValueError("article timestamp lies after the bin end")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return math.exp(-gamma * (bin_end - t) / SECONDS_PER_DAY)


# --------------------------------------------------------------------------
# embeddings and duplicate grouping
# --------------------------------------------------------------------------


def fallback_embedding(text: str | None, dim: int = FALLBACK_DIM) -> np.ndarray:
    """Signed feature hashing of character 3-grams, L2-normalised.

    Stable across processes (uses blake2b, not Python's salted ``hash``).
    Empty text yields the zero vector, which never links to anything.
    """
    vec = np.zeros(dim)
    s = f"  {(text or '').lower().strip()}  " if text else ""
    for i in range(len(s) - 2):
        h = int.from_bytes(hashlib.blake2b(s[i:i + 3].encode(), digest_size=8).digest(), "little")
        vec[h % dim] += 1.0 if (h >> 63) & 1 else -1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def embedding_matrix(articles: Sequence[Article], fallback: bool = True) -> np.ndarray:
    rows = []
    for a in articles:
        if a.embedding is not None:
            rows.append(np.asarray(a.embedding, dtype=float))
        elif fallback:
            rows.append(fallback_embedding(a.title_text))
        else:
            raise InputError(
                f"article of {a.entity_id} at {a.timestamp} has no embedding "
                "and the fallback embedder is disabled"
            )
    if not rows:
        return np.zeros((0, FALLBACK_DIM))
    dims = {r.shape[0] for r in rows}
    if len(dims) != 1:
        raise InputError(f"mixed embedding dimensions within one bin: {sorted(dims)}")
    return np.vstack(rows)


@dataclass
class DuplicatePartition:
    groups: list[tuple[int, ...]]
    group_size: np.ndarray  # per article, aligned with the input order

    def to_json(self) -> str:
        return json.dumps({"groups": [list(g) for g in self.groups]})


def group_near_duplicates(embeddings: np.ndarray, threshold: float = 0.85) -> DuplicatePartition:
    """Connected components of the graph linking pairs with cosine >= threshold.

    Groups are sorted internally and ordered by their smallest member.
    """
    E = np.asarray(embeddings, dtype=float)
    n = E.shape[0]
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    if n > 1:
        norms = np.linalg.norm(E, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        U = E / safe[:, None]
        sim = U @ U.T
        sim[norms == 0, :] = 0.0
        sim[:, norms == 0] = 0.0
        ii, jj = np.nonzero(np.triu(sim >= threshold, k=1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

    members: dict[int, list[int]] = {}
    for i in range(n):
        members.setdefault(find(i), []).append(i)
    groups = sorted((tuple(sorted(m)) for m in members.values()), key=lambda g: g[0])
    sizes = np.empty(n, dtype=np.int64)
    for g in groups:
        sizes[list(g)] = len(g)
    return DuplicatePartition(groups=groups, group_size=sizes)


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


def aggregate_bin(scores: np.ndarray, weights: np.ndarray, diag: Counter | None = None) -> float:
    """Weighted mean of one bin; ``NaN`` when empty or when all weights vanish."""
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if scores.size == 0:
        return math.nan
    if np.any(weights < 0):
        raise ValueError("aggregation weights must be nonnegative")
    total = weights.sum()
    if not total > 0:
        if diag is not None:
            diag["zero_weight_bins"] += 1
        return math.nan
    return float(np.clip(np.dot(weights, scores) / total, -1.0, 1.0))


def article_weights(
    arts: Sequence[Article], bin_end: int, cfg: WeightConfig, partition: DuplicatePartition | None = None
) -> np.ndarray:
    """Composed per-article weights for the members of one bin."""
    P = np.array([a.probs.as_array() for a in arts]).reshape(-1, 3)
    w = uncertainty_weights(P, cfg.uncertainty)
    if cfg.redundancy is not Redundancy.NONE and len(arts) > 0:
        if partition is None:
            partition = group_near_duplicates(
                embedding_matrix(arts, cfg.fallback_embedder), cfg.similarity_threshold
            )
        w = w * np.array(
            [redundancy_weight(int(n), cfg.redundancy, cfg.dedup_alpha) for n in partition.group_size]
        )
    gamma = cfg.recency.gamma
    if gamma > 0:
        elapsed = (bin_end - np.array([a.epoch for a in arts], dtype=float)) / SECONDS_PER_DAY
        w = w * np.exp(-gamma * elapsed)
    return w


def _aggregate_values(
    articles: Sequence[Article], grid: GridSpec, cfg: WeightConfig, diag: Counter | None, strict: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    assignment = assign_bins(articles, grid, strict=strict)
    members = assignment.members()
    values = np.full(grid.n_bins, np.nan)
    counts = assignment.counts
    effective = counts.astype(float)
    edges = grid.edges
    dedup = cfg.redundancy is Redundancy.DEDUP
    for k, idx in enumerate(members):
        if not idx:
            continue
        arts = [articles[i] for i in idx]
        scores = np.array([a.probs.p_pos - a.probs.p_neg for a in arts])
        partition = None
        if cfg.redundancy is not Redundancy.NONE:
            partition = group_near_duplicates(
                embedding_matrix(arts, cfg.fallback_embedder), cfg.similarity_threshold
            )
            if dedup:
                effective[k] = float(np.sum(partition.group_size.astype(float) ** -cfg.dedup_alpha))
        values[k] = aggregate_bin(scores, article_weights(arts, edges[k + 1], cfg, partition), diag)
    return values, counts, effective


def aggregate_global(
    articles: Sequence[Article],
    grid: GridSpec,
    cfg: WeightConfig = WeightConfig(),
    entity_id: str | None = None,
    diag: Counter | None = None,
    strict: bool = False,
) -> GridSeries:
    """Pool every category of one entity within each bin."""
    ent = entity_id if entity_id is not None else (articles[0].entity_id if articles else "")
    values, counts, eff = _aggregate_values(articles, grid, cfg, diag, strict)
    return GridSeries(ent, grid, values, counts, Stage.AGGREGATED, effective_counts=eff)


def aggregate_local(
    articles: Sequence[Article],
    grid: GridSpec,
    cfg: WeightConfig = WeightConfig(),
    reducer: Reducer | str = Reducer.UNWEIGHTED_MEAN,
    entity_id: str | None = None,
    diag: Counter | None = None,
    strict: bool = False,
) -> GridSeries:
    """Aggregate each category separately, then reduce across categories per bin."""
    reducer = Reducer(reducer)
    ent = entity_id if entity_id is not None else (articles[0].entity_id if articles else "")
    cats = sorted({a.category for a in articles})
    n = grid.n_bins
    if not cats:
        return GridSeries(ent, grid, np.full(n, np.nan), np.zeros(n, dtype=np.int64), Stage.AGGREGATED)
    V = np.empty((len(cats), n))
    C = np.empty((len(cats), n), dtype=np.int64)
    F = np.empty((len(cats), n))
    for j, c in enumerate(cats):
        sub = [a for a in articles if a.category == c]
        V[j], C[j], F[j] = _aggregate_values(sub, grid, cfg, diag, strict)
    present = ~np.isnan(V)
    if reducer is Reducer.UNWEIGHTED_MEAN:
        W = present.astype(float)
    else:
        W = np.where(present, C, 0).astype(float)
    tot = W.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(tot > 0, np.nansum(np.where(present, V, 0.0) * W, axis=0) / np.where(tot > 0, tot, 1.0), np.nan)
    values = np.where(present.any(axis=0), np.clip(values, -1.0, 1.0), np.nan)
    return GridSeries(ent, grid, values, C.sum(axis=0), Stage.AGGREGATED, effective_counts=F.sum(axis=0))
