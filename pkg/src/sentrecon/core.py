"""Domain types, temporal grids, bin assignment and article scoring.

Every downstream stage works on :class:`GridSeries` objects that live on a
:class:`GridSpec`.  Bins are half-open ``[left, right)`` intervals in UTC;
timestamps are kept at second resolution.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

SUM_TOL = 1e-9
RENORM_TOL = 1e-6
SECONDS_PER_DAY = 86400.0

WEEKDAYS = {
    "MON": 0, "TUE": 1, "WED": 2, "THU": 3, "FRI": 4, "SAT": 5, "SUN": 6,
}


class InputError(ValueError):
    """Raised for malformed or out-of-contract input data."""


class OutOfHorizonWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# probabilities and articles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbabilityTriple:
    p_pos: float
    p_neg: float
    p_neu: float

    def __post_init__(self) -> None:
        vals = (self.p_pos, self.p_neg, self.p_neu)
        for v in vals:
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise InputError(f"probability out of [0, 1]: {vals}")
        if abs(sum(vals) - 1.0) > SUM_TOL:
            raise InputError(f"probabilities do not sum to 1: {vals}")

    @classmethod
    def from_raw(cls, p_pos: float, p_neg: float, p_neu: float) -> "ProbabilityTriple":
        """Build a triple from classifier output, renormalizing tiny drift.

        Deviations from unit sum up to ``1e-6`` are renormalized away; larger
        ones are rejected.
        """
        vals = [float(p_pos), float(p_neg), float(p_neu)]
        if any(not math.isfinite(v) or v < 0.0 or v > 1.0 for v in vals):
            raise InputError(f"probability out of [0, 1]: {vals}")
        total = sum(vals)
        if abs(total - 1.0) > RENORM_TOL:
            raise InputError(f"probabilities sum to {total!r}, not 1")
        if total != 1.0:
            vals = [v / total for v in vals]
        # guard the last ulp so the strict invariant holds
        vals[2] = min(1.0, max(0.0, 1.0 - vals[0] - vals[1]))
        return cls(*vals)

    @classmethod
    def from_score(cls, score: float, neutral: float = 0.0) -> "ProbabilityTriple":
        """Smallest-change triple with ``p_pos - p_neg == score``.

        ``neutral`` is kept when feasible and shrunk otherwise.
        """
        s = float(np.clip(score, -1.0, 1.0))
        neu = min(max(neutral, 0.0), 1.0 - abs(s))
        polar = 1.0 - neu
        p_pos = (polar + s) / 2.0
        p_neg = polar - p_pos
        return cls.from_raw(max(p_pos, 0.0), max(p_neg, 0.0), neu)

    def as_array(self) -> np.ndarray:
        return np.array([self.p_pos, self.p_neg, self.p_neu])


@dataclass(frozen=True)
class Article:
    entity_id: str
    timestamp: datetime
    probs: ProbabilityTriple
    category: str = "all"
    embedding: tuple[float, ...] | None = None
    title_text: str | None = None

    def __post_init__(self) -> None:
        if self.timestamp.tzinfo is None:
            raise InputError("article timestamps must be timezone-aware UTC")
        ts = self.timestamp.astimezone(timezone.utc).replace(microsecond=0)
        object.__setattr__(self, "timestamp", ts)
        if self.embedding is not None:
            emb = tuple(float(v) for v in self.embedding)
            if not emb or not any(v != 0.0 for v in emb):
                raise InputError("embedding must be a nonzero vector")
            object.__setattr__(self, "embedding", emb)

    @property
    def score(self) -> float:
        return score_article(self.probs)

    @property
    def epoch(self) -> int:
        return int(self.timestamp.timestamp())


def score_article(probs: ProbabilityTriple) -> float:
    """Map a probability triple to a sentiment score in [-1, 1]."""
    return probs.p_pos - probs.p_neg


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------


class Frequency(str, Enum):
    DAILY = "daily"
    WEEKLY = "weekly"
    MONTHLY = "monthly"
    QUARTERLY = "quarterly"


def _utc(x: datetime | date | str) -> datetime:
    if isinstance(x, str):
        x = datetime.fromisoformat(x.replace("Z", "+00:00"))
    if isinstance(x, datetime):
        if x.tzinfo is None:
            x = x.replace(tzinfo=timezone.utc)
        return x.astimezone(timezone.utc).replace(microsecond=0)
    return datetime(x.year, x.month, x.day, tzinfo=timezone.utc)


@dataclass(frozen=True)
class GridSpec:
    start: datetime
    end: datetime
    frequency: Frequency
    anchor: str
    edges: tuple[int, ...]  # epoch seconds, len == n_bins + 1

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    def __len__(self) -> int:
        return self.n_bins

    @property
    def bins(self) -> list[tuple[datetime, datetime]]:
        e = [datetime.fromtimestamp(s, tz=timezone.utc) for s in self.edges]
        return list(zip(e[:-1], e[1:]))

    def bin_left(self, k: int) -> datetime:
        return datetime.fromtimestamp(self.edges[k], tz=timezone.utc)

    def bin_right(self, k: int) -> datetime:
        return datetime.fromtimestamp(self.edges[k + 1], tz=timezone.utc)

    def label(self, k: int) -> date:
        """Calendar label of bin ``k``: the last day it covers."""
        return (self.bin_right(k) - timedelta(seconds=1)).date()

    def edges_array(self) -> np.ndarray:
        return np.asarray(self.edges, dtype=np.int64)

    def params(self) -> dict:
        return {
            "start": self.start.isoformat(),
            "end": self.end.isoformat(),
            "frequency": self.frequency.value,
            "anchor": self.anchor,
        }


def _month_add(d: datetime, months: int) -> datetime:
    m = d.month - 1 + months
    return d.replace(year=d.year + m // 12, month=m % 12 + 1, day=1)


def build_grid(
    start: datetime | date | str,
    end: datetime | date | str,
    frequency: Frequency | str = Frequency.WEEKLY,
    anchor: str = "FRI",
) -> GridSpec:
    """Partition ``[start, end)`` into contiguous half-open bins.

    Weekly bins close at the end of the ``anchor`` weekday, so a W-FRI week
    covers Saturday through Friday and is labelled by its Friday.  Monthly and
    quarterly bins close at calendar boundaries.  The first bin starts at
    ``start`` and the last is truncated at ``end``.
    """
    start, end = _utc(start), _utc(end)
    frequency = Frequency(frequency)
    anchor = anchor.upper()
    if anchor not in WEEKDAYS:
        raise ValueError(f"unknown weekday anchor {anchor!r}")
    if not start < end:
        raise ValueError(f"empty horizon: start {start} is not before end {end}")

    midnight = start.replace(hour=0, minute=0, second=0)
    if frequency is Frequency.DAILY:
        nxt = midnight + timedelta(days=1)
        step = lambda d: d + timedelta(days=1)  # noqa: E731
    elif frequency is Frequency.WEEKLY:
        ahead = (WEEKDAYS[anchor] - midnight.weekday()) % 7
        nxt = midnight + timedelta(days=ahead + 1)
        step = lambda d: d + timedelta(days=7)  # noqa: E731
    elif frequency is Frequency.MONTHLY:
        nxt = _month_add(midnight, 1)
        step = lambda d: _month_add(d, 1)  # noqa: E731
    else:
        q0 = midnight.replace(month=3 * ((midnight.month - 1) // 3) + 1, day=1)
        nxt = _month_add(q0, 3)
        step = lambda d: _month_add(d, 3)  # noqa: E731

    edges = [start]
    while nxt < end:
        edges.append(nxt)
        nxt = step(nxt)
    edges.append(end)
    return GridSpec(
        start=start,
        end=end,
        frequency=frequency,
        anchor=anchor,
        edges=tuple(int(e.timestamp()) for e in edges),
    )


# --------------------------------------------------------------------------
# grid series
# --------------------------------------------------------------------------


class Stage(str, Enum):
    AGGREGATED = "aggregated"
    FILLED = "filled"
    SMOOTHED = "smoothed"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridSeries:
    """A regular-grid series; ``NaN`` marks a missing bin."""

    entity_id: str
    grid: GridSpec
    values: np.ndarray
    counts: np.ndarray
    stage: Stage
    bounded: bool = True
    # redundancy-discounted counts seen by count-aware smoothers; defaults to ``counts``
    effective_counts: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = _frozen(np.asarray(self.values, dtype=float))
        counts = _frozen(np.asarray(self.counts, dtype=np.int64))
        eff = counts if self.effective_counts is None else self.effective_counts
        eff = _frozen(np.asarray(eff, dtype=float))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "effective_counts", eff)
        n = self.grid.n_bins
        if values.shape != (n,) or counts.shape != (n,) or eff.shape != (n,):
            raise ValueError(
                f"series length {values.shape} / counts {counts.shape} != grid length {n}"
            )
        if np.any(counts < 0) or np.any(eff < 0):
            raise ValueError("article counts must be nonnegative")
        if self.stage is Stage.AGGREGATED and np.any(~np.isnan(values[counts == 0])):
            raise ValueError("empty aggregated bins must be missing")
        if self.bounded:
            obs = values[~np.isnan(values)]
            if obs.size and (obs.min() < -1.0 - 1e-12 or obs.max() > 1.0 + 1e-12):
                raise ValueError("bounded series has values outside [-1, 1]")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def with_values(self, values: np.ndarray, stage: Stage, bounded: bool = True) -> "GridSeries":
        return GridSeries(
            self.entity_id, self.grid, values, self.counts, stage, bounded, self.effective_counts
        )


# --------------------------------------------------------------------------
# bin assignment
# --------------------------------------------------------------------------


@dataclass
class BinAssignment:
    bin_of: np.ndarray  # bin index per kept article
    kept: list[int]  # indices into the input sequence
    rejected: list[int]
    n_bins: int

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.bin_of, minlength=self.n_bins).astype(np.int64)

    def members(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_bins)]
        for idx, b in zip(self.kept, self.bin_of):
            out[int(b)].append(idx)
        return out


def assign_bins(
    articles: Sequence[Article], grid: GridSpec, strict: bool = False
) -> BinAssignment:
    """Assign each article to the unique half-open bin containing it.

    Out-of-horizon articles raise :class:`InputError` under ``strict`` and
    are otherwise dropped with a warning.
    """
    secs = np.fromiter((a.epoch for a in articles), dtype=np.int64, count=len(articles))
    edges = grid.edges_array()
    idx = np.searchsorted(edges, secs, side="right") - 1
    inside = (secs >= edges[0]) & (secs < edges[-1])
    rejected = np.flatnonzero(~inside).tolist()
    if rejected:
        msg = f"{len(rejected)} article(s) outside [{grid.start}, {grid.end})"
        if strict:
            raise InputError(msg)
        warnings.warn(msg, OutOfHorizonWarning, stacklevel=2)
    kept = np.flatnonzero(inside)
    return BinAssignment(
        bin_of=idx[kept].astype(np.int64),
        kept=kept.tolist(),
        rejected=rejected,
        n_bins=grid.n_bins,
    )


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------


def _article_from_record(rec: dict, where: str) -> Article:
    try:
        probs = ProbabilityTriple.from_raw(rec["p_pos"], rec["p_neg"], rec["p_neu"])
        emb = rec.get("embedding")
        return Article(
            entity_id=str(rec["entity_id"]),
            timestamp=_utc(str(rec["ts"])),
            probs=probs,
            category=str(rec.get("category") or "all"),
            embedding=tuple(emb) if emb else None,
            title_text=rec.get("title") or None,
        )
    except KeyError as exc:
        raise InputError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: {exc}") from None


def read_articles_jsonl(path: str | Path) -> list[Article]:
    """Read line-delimited JSON articles; errors carry the 1-based line number."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise InputError(f"{path}:{lineno}: expected a JSON object")
            out.append(_article_from_record(rec, f"{path}:{lineno}"))
    return out


def read_articles_csv(path: str | Path) -> list[Article]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), start=2):
            out.append(_article_from_record(rec, f"{path}:{lineno}"))
    return out


def read_articles(path: str | Path) -> list[Article]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_articles_csv(path)
    return read_articles_jsonl(path)


def write_articles_jsonl(articles: Iterable[Article], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in articles:
            rec = {
                "entity_id": a.entity_id,
                "ts": a.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
                "p_pos": a.probs.p_pos,
                "p_neg": a.probs.p_neg,
                "p_neu": a.probs.p_neu,
                "category": a.category,
            }
            if a.embedding is not None:
                rec["embedding"] = list(a.embedding)
            if a.title_text:
                rec["title"] = a.title_text
            fh.write(json.dumps(rec) + "\n")


def group_by_entity(articles: Iterable[Article]) -> dict[str, list[Article]]:
    out: dict[str, list[Article]] = {}
    for a in articles:
        out.setdefault(a.entity_id, []).append(a)
    return dict(sorted(out.items()))


@dataclass
class PricePanel:
    """Closing prices keyed by entity and calendar date."""

    closes: dict[str, dict[date, float]] = field(default_factory=dict)

    def aligned(self, entity_id: str, grid: GridSpec) -> np.ndarray:
        """Last close on or before each bin's final day; ``NaN`` if none in the bin."""
        series = self.closes.get(entity_id, {})
        out = np.full(grid.n_bins, np.nan)
        if not series:
            return out
        days = sorted(series)
        ords = np.array([d.toordinal() for d in days])
        vals = np.array([series[d] for d in days])
        for k in range(grid.n_bins):
            lo = grid.bin_left(k).date().toordinal()
            hi = grid.label(k).toordinal()
            j = np.searchsorted(ords, hi, side="right") - 1
            if j >= 0 and ords[j] >= lo:
                out[k] = vals[j]
        return out


def read_prices_csv(path: str | Path) -> PricePanel:
    panel = PricePanel()
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), start=2):
            try:
                close = float(rec["close"])
                day = date.fromisoformat(rec["date"][:10])
                ent = str(rec["entity_id"])
            except (KeyError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            if not close > 0:
                raise InputError(f"{path}:{lineno}: nonpositive close {close}")
            panel.closes.setdefault(ent, {})[day] = close
    return panel
