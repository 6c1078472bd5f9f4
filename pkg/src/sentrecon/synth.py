"""Synthetic article panels with a planted latent sentiment and price lead-lag."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .core import Article, GridSpec, PricePanel, ProbabilityTriple, build_grid, write_articles_jsonl

# named sub-streams: every random draw is keyed by (seed, stream, entity)
STREAM_LATENT = 1
STREAM_ARTICLES = 2
STREAM_EMBED = 3
STREAM_PRICES = 4


@dataclass(frozen=True)
class SynthParams:
    n_entities: int = 10
    n_bins: int = 80
    start: str = "2021-01-02"  # a Saturday, so W-FRI bins are whole weeks
    phi: float = 0.8  # latent AR(1) coefficient in arctanh space
    latent_sd: float = 0.35
    rate: float = 4.0  # mean articles per non-empty bin
    sparsity: float = 0.3  # probability that a bin receives no articles
    obs_sd: float = 0.35  # article noise in arctanh space
    ambiguity: float = 0.2  # share of polar-conflicted, noisier articles
    duplicate_rate: float = 0.0  # share of articles that spawn a near-duplicate
    n_categories: int = 3
    embed_dim: int = 64
    price_lag: int = 3
    price_beta: float = 0.05
    snr: float = 1.0

    def __post_init__(self) -> None:
        if self.n_entities < 1 or self.n_bins < 2:
            raise ValueError("need at least one entity and two bins")
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError("sparsity must lie in [0, 1)")
        if not -1.0 < self.phi < 1.0:
            raise ValueError("latent AR coefficient must lie in (-1, 1)")
        for name in ("rate", "snr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("ambiguity", "duplicate_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class SynthPanel:
    params: SynthParams
    grid: GridSpec
    articles: list[Article]
    prices: PricePanel
    latent: dict[str, np.ndarray] = field(default_factory=dict)  # bounded latent x(k)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "articles": out / "articles.jsonl",
            "prices": out / "prices.csv",
            "latent": out / "latent.csv",
            "config": out / "panel.toml",
        }
        write_articles_jsonl(self.articles, paths["articles"])
        with open(paths["prices"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["entity_id", "date", "close"])
            for ent, series in self.prices.closes.items():
                for d, c in sorted(series.items()):
                    w.writerow([ent, d.isoformat(), repr(c)])
        with open(paths["latent"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["entity_id", "bin", "label", "latent"])
            for ent, x in self.latent.items():
                for k, v in enumerate(x):
                    w.writerow([ent, k, self.grid.label(k).isoformat(), repr(float(v))])
        g = self.grid
        with open(paths["config"], "w", encoding="utf-8") as fh:
            fh.write("# grid of the generated panel\n")
            fh.write("[pipeline.grid]\n")
            fh.write(f'start = "{g.start.date().isoformat()}"\n')
            fh.write(f'end = "{g.end.date().isoformat()}"\n')
            fh.write('frequency = "weekly"\nanchor = "FRI"\n')
            fh.write("\n# generator parameters\n")
            for k, v in asdict(self.params).items():
                fh.write(f"# {k} = {v}\n")
        return paths


def _rng(seed: int, stream: int, entity: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, stream, entity])


def latent_path(n: int, phi: float, sd: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) in arctanh space, returned on the bounded scale."""
    z = np.empty(n)
    z[0] = rng.normal(0.0, sd / math.sqrt(1 - phi**2))
    eps = rng.normal(0.0, sd, n)
    for k in range(1, n):
        z[k] = phi * z[k - 1] + eps[k]
    return np.tanh(z)


def planted_returns(x: np.ndarray, lag: int, beta: float, snr: float, rng: np.random.Generator) -> np.ndarray:
    """``r(k) = beta x(k - lag) + e(k)`` with ``var(beta x) / var(e) = snr``."""
    n = x.shape[0]
    signal = np.zeros(n)
    if lag >= 0:
        signal[lag:] = beta * x[: n - lag]
    else:
        signal[:lag] = beta * x[-lag:]
    sd_sig = float(np.std(beta * x))
    noise = rng.normal(0.0, sd_sig / math.sqrt(snr) if sd_sig > 0 else 1e-3, n)
    return signal + noise


def _triple(score: float, ambiguous: bool, rng: np.random.Generator) -> ProbabilityTriple:
    s = float(np.clip(score, -0.999, 0.999))
    neutral = 0.0 if ambiguous else float(rng.uniform(0.0, 1.0 - abs(s)))
    return ProbabilityTriple.from_score(s, neutral)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def jitter_embedding(e: np.ndarray, min_cos: float, rng: np.random.Generator) -> np.ndarray:
    """Random unit vector with cosine similarity to ``e`` exactly ``min_cos`` or above."""
    u = _unit(np.asarray(e, dtype=float))
    r = rng.normal(size=u.shape[0])
    r -= (r @ u) * u
    r = _unit(r)
    c = float(rng.uniform(min_cos, 1.0))
    return c * u + math.sqrt(max(0.0, 1.0 - c * c)) * r


def make_panel(params: SynthParams = SynthParams(), seed: int = 0) -> SynthPanel:
    start = datetime.fromisoformat(params.start).replace(tzinfo=timezone.utc)
    grid = build_grid(start, start + timedelta(days=7 * params.n_bins), "weekly", "FRI")
    edges = grid.edges_array()
    articles: list[Article] = []
    prices = PricePanel()
    latent: dict[str, np.ndarray] = {}
    width = len(str(params.n_entities - 1))
    for e in range(params.n_entities):
        ent = f"E{e:0{width}d}"
        x = latent_path(params.n_bins, params.phi, params.latent_sd, _rng(seed, STREAM_LATENT, e))
        latent[ent] = x
        ra = _rng(seed, STREAM_ARTICLES, e)
        re = _rng(seed, STREAM_EMBED, e)
        serial = 0
        for k in range(params.n_bins):
            if ra.random() < params.sparsity:
                continue
            n = 1 + ra.poisson(params.rate - 1) if params.rate > 1 else 1
            secs = np.sort(ra.integers(edges[k], edges[k + 1], n))
            zk = math.atanh(float(np.clip(x[k], -0.999999, 0.999999)))
            for t in secs:
                amb = bool(ra.random() < params.ambiguity)
                sd = params.obs_sd * (3.0 if amb else 1.0)
                score = math.tanh(zk + ra.normal(0.0, sd))
                emb = _unit(re.normal(size=params.embed_dim))
                art = Article(
                    ent,
                    datetime.fromtimestamp(int(t), tz=timezone.utc),
                    _triple(score, amb, ra),
                    category=f"c{int(ra.integers(params.n_categories))}",
                    embedding=tuple(emb),
                    title_text=f"{ent} story {serial}",
                )
                serial += 1
                articles.append(art)
                if ra.random() < params.duplicate_rate:
                    dup_t = int(ra.integers(edges[k], edges[k + 1]))
                    articles.append(Article(
                        ent,
                        datetime.fromtimestamp(dup_t, tz=timezone.utc),
                        _triple(math.tanh(math.atanh(float(np.clip(score, -0.999, 0.999))) + ra.normal(0, 0.05)), amb, ra),
                        category=art.category,
                        embedding=tuple(jitter_embedding(emb, 0.95, re)),
                        title_text=f"{ent} story {serial - 1} (repost)",
                    ))
        r = planted_returns(x, params.price_lag, params.price_beta, params.snr, _rng(seed, STREAM_PRICES, e))
        closes = 100.0 * np.exp(np.cumsum(r))
        prices.closes[ent] = {grid.label(k): float(closes[k]) for k in range(params.n_bins)}
    articles.sort(key=lambda a: (a.entity_id, a.epoch, a.title_text or ""))
    return SynthPanel(params, grid, articles, prices, latent)


def bin_label_dates(grid: GridSpec) -> list[date]:
    return [grid.label(k) for k in range(grid.n_bins)]
