"""Impulse causality test and duplicate-injection robustness test.

Both tests perturb inputs only; the pipeline configuration is hashed before
and after every paired run to prove it was not touched.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Mapping, Sequence

import numpy as np

from .aggregate import Redundancy, embedding_matrix
from .config import PipelineConfig
from .core import Article, GridSpec, ProbabilityTriple, Stage, assign_bins
from .evaluate import MetricSummary, cross_section_summary
from .pipeline import ArticleInput, _all_articles, _by_entity, run_pipeline
from .smooth import SmootherFn
from .synth import jitter_embedding

COSINE_MARGIN = 0.02


class CausalityViolation(AssertionError):
    pass


def _summary(values: Sequence[float]) -> dict | None:
    try:
        return cross_section_summary(values).to_dict()
    except ValueError:
        return None


def _json_float(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return None
    return v


# --------------------------------------------------------------------------
# impulse test
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ImpulseSpec:
    k0: int
    delta: float = 0.8
    scheme: str = "additive_existing"  # or synthetic_observation
    tau: float = 1e-9

    def __post_init__(self) -> None:
        if self.scheme not in ("additive_existing", "synthetic_observation"):
            raise ValueError(f"unknown impulse scheme {self.scheme!r}")
        if not self.tau >= 0:
            raise ValueError("tolerance must be >= 0")


def _synthetic_article(entity: str, grid: GridSpec, k0: int, score: float, like: Sequence[Article]) -> Article:
    dims = {len(a.embedding) for a in like if a.embedding is not None}
    emb = None
    if dims:
        rng = np.random.default_rng([zlib.crc32(entity.encode()), k0])
        v = rng.normal(size=dims.pop())
        emb = tuple(v / np.linalg.norm(v))
    return Article(
        entity,
        datetime.fromtimestamp(grid.edges[k0], tz=timezone.utc),
        ProbabilityTriple.from_score(score),
        category=like[0].category if like else "all",
        embedding=emb,
        title_text=f"synthetic impulse {entity} {k0}",
    )


def apply_impulse(articles: Sequence[Article], grid: GridSpec, spec: ImpulseSpec, entity: str) -> list[Article]:
    """Perturbed copy of one entity's articles; scores stay inside [-1, 1].

    ``additive_existing`` shifts the earliest article of bin ``k0`` by
    ``delta``; an empty bin falls back to a synthetic observation at the
    bin's left edge with score ``delta``.
    """
    if not 0 <= spec.k0 < grid.n_bins:
        raise ValueError(f"impulse bin {spec.k0} outside grid of {grid.n_bins} bins")
    out = list(articles)
    if spec.scheme == "additive_existing":
        asg = assign_bins(out, grid)
        members = [i for i, b in zip(asg.kept, asg.bin_of) if b == spec.k0]
        if members:
            i = min(members, key=lambda j: (out[j].epoch, j))
            a = out[i]
            s = float(np.clip(a.score + spec.delta, -1.0, 1.0))
            out[i] = replace(a, probs=ProbabilityTriple.from_score(s, a.probs.p_neu))
            return out
    s = float(np.clip(spec.delta, -1.0, 1.0))
    out.append(_synthetic_article(entity, grid, spec.k0, s, out))
    return out


def pre_impulse_deviation(base: np.ndarray, pert: np.ndarray, k0: int) -> float:
    """``max_{k < k0} |pert - base|``; a missing-vs-value mismatch is ``inf``."""
    a, b = np.asarray(base[:k0], float), np.asarray(pert[:k0], float)
    if a.size == 0:
        return 0.0
    na, nb = np.isnan(a), np.isnan(b)
    if np.any(na != nb):
        return math.inf
    both = ~na
    return float(np.max(np.abs(a[both] - b[both]), initial=0.0))


@dataclass
class ImpulseReport:
    spec: ImpulseSpec
    stage: Stage
    config_digest: str
    d_pre: dict[str, float] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def passed(self, entity: str) -> bool:
        return self.d_pre[entity] <= self.spec.tau

    @property
    def pass_rate(self) -> float:
        if not self.d_pre:
            return math.nan
        return sum(self.passed(e) for e in self.d_pre) / len(self.d_pre)

    @property
    def max_d_pre(self) -> float:
        return max(self.d_pre.values(), default=math.nan)

    @property
    def ok(self) -> bool:
        return bool(self.d_pre) and self.pass_rate == 1.0 and not self.errors

    def to_dict(self) -> dict:
        finite = [v for v in self.d_pre.values() if math.isfinite(v)]
        return {
            "test": "impulse",
            "scheme": self.spec.scheme,
            "k0": self.spec.k0,
            "delta": self.spec.delta,
            "tau": _json_float(self.spec.tau),
            "stage": self.stage.value,
            "config_digest": self.config_digest,
            "pass_rate": self.pass_rate,
            "max_d_pre": _json_float(self.max_d_pre),
            "entities": {
                e: {"d_pre": _json_float(v), "pass": self.passed(e)} for e, v in self.d_pre.items()
            },
            "summary": _summary(finite),
            "errors": self.errors,
        }


def run_impulse_test(
    config: PipelineConfig,
    articles: ArticleInput,
    spec: ImpulseSpec,
    grid: GridSpec | None = None,
    stage: Stage | str | None = None,
    override: SmootherFn | None = None,
) -> ImpulseReport:
    """Per-entity maximum pre-impulse change of the chosen output stage."""
    by_entity = _by_entity(articles)
    if grid is None:
        grid = config.grid.build(_all_articles(by_entity))
    if not 0 <= spec.k0 < grid.n_bins:
        raise ValueError(f"impulse bin {spec.k0} outside grid of {grid.n_bins} bins")
    stage = config.output_stage if stage is None else Stage(stage)
    digest = config.digest()
    base = run_pipeline(config, by_entity, grid, override)
    perturbed = {e: apply_impulse(a, grid, spec, e) for e, a in by_entity.items()}
    pert = run_pipeline(config, perturbed, grid, override)
    if config.digest() != digest:
        raise CausalityViolation("pipeline configuration changed between paired runs")
    report = ImpulseReport(spec, stage, digest, errors={**base.errors, **pert.errors})
    for e in by_entity:
        if e in base.series and e in pert.series:
            report.d_pre[e] = pre_impulse_deviation(
                base.series[e].stage(stage).values, pert.series[e].stage(stage).values, spec.k0
            )
    return report


# --------------------------------------------------------------------------
# duplicate test
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DuplicateInjectionSpec:
    fraction: float = 0.3
    copies_per_source: int = 1
    score_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("duplicate fraction must lie in [0, 1]")
        if self.copies_per_source < 1:
            raise ValueError("copies_per_source must be >= 1")
        if self.score_jitter < 0:
            raise ValueError("score jitter must be >= 0")


def inject_duplicates(
    articles: Sequence[Article],
    entity: str,
    spec: DuplicateInjectionSpec,
    threshold: float = 0.85,
    fallback: bool = True,
) -> list[Article]:
    """Add near-duplicates of a random share of one entity's articles.

    Each copy keeps the source timestamp (hence its bin) and category, has its
    score jittered by ``N(0, score_jitter)`` and clipped, and an embedding
    whose cosine similarity to the source is at least ``threshold + 0.02``.
    """
    out = list(articles)
    n = len(out)
    n_src = int(round(spec.fraction * n))
    if n_src == 0:
        return out
    rng = np.random.default_rng([int(spec.seed) & 0xFFFFFFFF, zlib.crc32(entity.encode())])
    src = np.sort(rng.choice(n, size=n_src, replace=False))
    E = embedding_matrix([out[i] for i in src], fallback)
    min_cos = min(threshold + COSINE_MARGIN, 1.0)
    for row, i in enumerate(src.tolist()):
        a = out[i]
        for _ in range(spec.copies_per_source):
            s = a.score
            if spec.score_jitter > 0:
                s = float(np.clip(s + rng.normal(0.0, spec.score_jitter), -1.0, 1.0))
            probs = a.probs if s == a.score else ProbabilityTriple.from_score(s, a.probs.p_neu)
            out.append(replace(
                a,
                probs=probs,
                embedding=tuple(jitter_embedding(E[row], min_cos, rng)),
            ))
    return out


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of absolute differences over bins where both series are observed."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    both = ~np.isnan(a) & ~np.isnan(b)
    return float(np.abs(a[both] - b[both]).sum())


def redundancy_pair(config: PipelineConfig) -> tuple[PipelineConfig, PipelineConfig]:
    """(no-detect, detect) configurations differing only in redundancy control."""
    w = config.weights
    no = replace(config, weights=replace(w, redundancy=Redundancy.NONE))
    alpha = w.dedup_alpha if w.redundancy is Redundancy.DEDUP else 1.0
    yes = replace(config, weights=replace(w, redundancy=Redundancy.DEDUP, dedup_alpha=alpha))
    return no, yes


@dataclass
class DuplicateReport:
    spec: DuplicateInjectionSpec
    stage: Stage
    digests: tuple[str, str]
    d_no_detect: dict[str, float] = field(default_factory=dict)
    d_detect: dict[str, float] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def medians(self) -> tuple[float, float]:
        return (
            float(np.median(list(self.d_no_detect.values()))) if self.d_no_detect else math.nan,
            float(np.median(list(self.d_detect.values()))) if self.d_detect else math.nan,
        )

    def to_dict(self) -> dict:
        return {
            "test": "duplicates",
            "fraction": self.spec.fraction,
            "copies_per_source": self.spec.copies_per_source,
            "score_jitter": self.spec.score_jitter,
            "seed": self.spec.seed,
            "stage": self.stage.value,
            "config_digests": {"no_detect": self.digests[0], "detect": self.digests[1]},
            "entities": {
                e: {"d_no_detect": self.d_no_detect[e], "d_detect": self.d_detect[e]}
                for e in self.d_no_detect
            },
            "summary": {
                "d_no_detect": _summary(list(self.d_no_detect.values())),
                "d_detect": _summary(list(self.d_detect.values())),
            },
            "errors": self.errors,
        }


def run_duplicate_test(
    config: PipelineConfig,
    articles: ArticleInput,
    spec: DuplicateInjectionSpec = DuplicateInjectionSpec(),
    grid: GridSpec | None = None,
    stage: Stage | str | None = None,
) -> DuplicateReport:
    """ℓ1 distortion of duplicate-augmented runs with and without redundancy control.

    Both augmented runs consume the same augmented input and are compared to
    the unperturbed run of the redundancy-controlled configuration.
    """
    by_entity = _by_entity(articles)
    if grid is None:
        grid = config.grid.build(_all_articles(by_entity))
    stage = config.output_stage if stage is None else Stage(stage)
    no_cfg, yes_cfg = redundancy_pair(config)
    digests = (no_cfg.digest(), yes_cfg.digest())
    thr = config.weights.similarity_threshold
    aug = {
        e: inject_duplicates(a, e, spec, thr, config.weights.fallback_embedder)
        for e, a in by_entity.items()
    }
    base = run_pipeline(yes_cfg, by_entity, grid)
    r_no = run_pipeline(no_cfg, aug, grid)
    r_yes = run_pipeline(yes_cfg, aug, grid)
    if (no_cfg.digest(), yes_cfg.digest()) != digests:
        raise CausalityViolation("pipeline configuration changed between paired runs")
    report = DuplicateReport(spec, stage, digests, errors={**base.errors, **r_no.errors, **r_yes.errors})
    for e in by_entity:
        if e in base.series and e in r_no.series and e in r_yes.series:
            b = base.series[e].stage(stage).values
            report.d_no_detect[e] = l1_distance(r_no.series[e].stage(stage).values, b)
            report.d_detect[e] = l1_distance(r_yes.series[e].stage(stage).values, b)
    return report


def reports_to_json(*reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


__all__ = [
    "CausalityViolation",
    "DuplicateInjectionSpec",
    "DuplicateReport",
    "ImpulseReport",
    "ImpulseSpec",
    "apply_impulse",
    "inject_duplicates",
    "l1_distance",
    "pre_impulse_deviation",
    "redundancy_pair",
    "reports_to_json",
    "run_duplicate_test",
    "run_impulse_test",
]
