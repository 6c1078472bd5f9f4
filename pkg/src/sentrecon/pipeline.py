"""Stage orchestration, design studies, consistency studies and result trees."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .aggregate import Recency, Redundancy, Uncertainty, aggregate_global, aggregate_local
from .config import PipelineConfig, Scope, StudyParams, SweepSpec
from .consistency import (
    ConsistencyRow,
    composite_score,
    fisher_aggregate,
    prewhiten_pair,
    prewhitened_ccf,
    rank_rows,
    rolling_dtw,
    rolling_granger,
    rolling_log_return,
    rolling_minmax,
    rows_to_csv,
    stationarize,
    welch_coherence,
)
from .consistency.ccf import CcfResult, _peak_index
from .consistency.dtw import DtwWindow
from .consistency.granger import GrangerWindow
from .core import Article, GridSeries, GridSpec, PricePanel, Stage, group_by_entity
from .evaluate import (
    EntityMetrics,
    MetricSummary,
    cross_section_summary,
    entity_metrics,
    summarise_metrics,
)
from .fill import FillConfig, causal_fill
from .smooth import SmootherConfig, SmootherFn, smooth

log = logging.getLogger(__name__)

ArticleInput = Sequence[Article] | Mapping[str, Sequence[Article]]


# --------------------------------------------------------------------------
# reconstruction
# --------------------------------------------------------------------------


@dataclass
class StagedSeries:
    aggregated: GridSeries
    filled: GridSeries
    smoothed: GridSeries

    def stage(self, stage: Stage | str) -> GridSeries:
        return getattr(self, Stage(stage).value)


@dataclass
class PipelineRun:
    config: PipelineConfig
    grid: GridSpec
    series: dict[str, StagedSeries]
    errors: dict[str, str] = field(default_factory=dict)
    diagnostics: Counter = field(default_factory=Counter)

    def output(self, stage: Stage | str | None = None) -> dict[str, GridSeries]:
        st = self.config.output_stage if stage is None else Stage(stage)
        return {e: s.stage(st) for e, s in self.series.items()}


def _by_entity(articles: ArticleInput) -> dict[str, list[Article]]:
    if isinstance(articles, Mapping):
        return {k: list(articles[k]) for k in sorted(articles)}
    return group_by_entity(articles)


def _all_articles(by_entity: Mapping[str, Sequence[Article]]) -> list[Article]:
    return [a for arts in by_entity.values() for a in arts]


def reconstruct(
    articles: Sequence[Article],
    grid: GridSpec,
    config: PipelineConfig,
    entity_id: str,
    diag: Counter | None = None,
    override: SmootherFn | None = None,
) -> StagedSeries:
    """Aggregate, fill and smooth one entity, keeping every stage."""
    if config.scope.scope == "global":
        agg = aggregate_global(articles, grid, config.weights, entity_id, diag)
    else:
        agg = aggregate_local(articles, grid, config.weights, config.scope.reducer, entity_id, diag)
    filled = causal_fill(agg, config.fill)
    smoothed = smooth(filled, config.smoother, diag, override)
    return StagedSeries(agg, filled, smoothed)


def run_pipeline(
    config: PipelineConfig,
    articles: ArticleInput,
    grid: GridSpec | None = None,
    override: SmootherFn | None = None,
) -> PipelineRun:
    """Run every entity through the configured stages.

    A failing entity is logged and recorded in ``errors``; the rest of the
    panel is unaffected.
    """
    by_entity = _by_entity(articles)
    if grid is None:
        grid = config.grid.build(_all_articles(by_entity))
    run = PipelineRun(config, grid, {})
    for ent, arts in by_entity.items():
        try:
            run.series[ent] = reconstruct(arts, grid, config, ent, run.diagnostics, override)
        except Exception as exc:  # noqa: BLE001 - isolate per-entity failures
            log.warning("entity %s failed: %s", ent, exc)
            run.errors[ent] = f"{type(exc).__name__}: {exc}"
    return run


def run_metrics(run: PipelineRun) -> list[EntityMetrics]:
    return [entity_metrics(s.aggregated, s.filled, s.smoothed) for s in run.series.values()]


# --------------------------------------------------------------------------
# design study
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignRow:
    stage: str  # aggregation | filling | smoothing
    scope: str
    variant: str
    metric: str
    values: tuple[float, ...]
    baseline: bool

    def as_list(self) -> list:
        return [self.stage, self.scope, self.variant, self.metric, self.baseline, *self.values]


DESIGN_HEADER = ("stage", "scope", "variant", "metric", "baseline", *MetricSummary.FIELDS)


def _summary(vals: Sequence[float]) -> MetricSummary | None:
    try:
        return cross_section_summary(vals)
    except ValueError:
        return None


def _rows_vs_baseline(
    stage: str, scope: str, metric: str, variants: list[tuple[str, list[float]]], delta: bool = True
) -> list[DesignRow]:
    base_label, base_vals = variants[0]
    base = _summary(base_vals)
    nan6 = (math.nan,) * 6
    rows = [DesignRow(stage, scope, base_label, metric, base.row() if base else nan6, True)]
    for label, vals in variants[1:]:
        s = _summary(vals)
        if s is None:
            row = nan6
        elif delta and base is not None:
            row = s.minus(base)
        else:
            row = s.row()
        rows.append(DesignRow(stage, scope, label, metric, row, False))
    return rows


def run_design_study(
    sweep: SweepSpec, articles: ArticleInput, grid: GridSpec | None = None
) -> list[DesignRow]:
    """Stage-by-stage comparisons against per-stage baselines.

    Baselines are the unweighted mean (aggregation), constant fill (filling)
    and no smoothing (smoothing).  Baseline rows carry levels, other rows
    carry differences from the baseline; gap drift is always reported as a
    level.  Each stage varies only its own axes and holds the others at the
    sweep's base configuration.
    """
    by_entity = _by_entity(articles)
    base = sweep.base
    if grid is None:
        grid = base.grid.build(_all_articles(by_entity))
    rows: list[DesignRow] = []

    def tv(cfg: PipelineConfig, stage: Stage) -> tuple[list[float], list[EntityMetrics]]:
        m = run_metrics(run_pipeline(cfg, by_entity, grid))
        attr = {"aggregated": "tv_aggregated", "filled": "tv_filled", "smoothed": "tv_smoothed"}[stage.value]
        return [getattr(x, attr) for x in m], m

    for scope in sweep.scope:
        plain = replace(base, scope=scope)
        w0 = replace(base.weights, uncertainty=Uncertainty.NONE, redundancy=Redundancy.NONE, recency=Recency())

        # aggregation: one family at a time, others at the unweighted baseline
        families = [
            ("uncertainty", [replace(w0, uncertainty=u) for u in sweep.uncertainty if u is not Uncertainty.NONE]),
            ("redundancy", [replace(w0, redundancy=r, dedup_alpha=a) for r, a in sweep.redundancy if r is not Redundancy.NONE]),
            ("recency", [replace(w0, recency=r) for r in sweep.recency if r.form != "none"]),
        ]
        variants = [("unweighted_mean", tv(replace(plain, weights=w0), Stage.AGGREGATED)[0])]
        for fam, ws in families:
            for w in ws:
                label = {
                    "uncertainty": w.uncertainty.value,
                    "redundancy": f"{w.redundancy.value}(alpha={w.dedup_alpha:g})",
                    "recency": w.recency.label,
                }[fam]
                variants.append((f"{fam}:{label}", tv(replace(plain, weights=w), Stage.AGGREGATED)[0]))
        rows += _rows_vs_baseline("aggregation", scope.label, "TV", variants)

        # filling
        fills = [FillConfig("constant")] + [f for f in sweep.fill if f != FillConfig("constant")]
        tv_rows, gd_rows = [], []
        for f in fills:
            vals, m = tv(replace(plain, fill=f), Stage.FILLED)
            tv_rows.append((f.label, vals))
            gd_rows.append((f.label, [x.gap_drift for x in m]))
        rows += _rows_vs_baseline("filling", scope.label, "TV", tv_rows)
        rows += _rows_vs_baseline("filling", scope.label, "GD", gd_rows, delta=False)

        # smoothing
        smoothers = [SmootherConfig("none")] + [s for s in sweep.smoother if s.method != "none"]
        per = {}
        for sm in smoothers:
            per[sm.label] = run_metrics(run_pipeline(replace(plain, smoother=sm), by_entity, grid))
        for metric, attr in (("TV", "tv_smoothed"), ("lag", "abs_lag"), ("rho", "rho_star")):
            variants = []
            for label, m in per.items():
                vals = [float(getattr(x, attr)) for x in m]
                if attr == "abs_lag":
                    vals = [v if v >= 0 else math.nan for v in vals]
                variants.append(("none (baseline)" if label == "none" else label, vals))
            rows += _rows_vs_baseline("smoothing", scope.label, metric, variants)
    return rows


def design_rows_to_csv(rows: Sequence[DesignRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DESIGN_HEADER)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r.as_list()])
    return buf.getvalue()


# --------------------------------------------------------------------------
# consistency study
# --------------------------------------------------------------------------


@dataclass
class EntityConsistency:
    entity_id: str
    n_articles: int
    n_matched: int
    ccf: CcfResult | None
    granger: list[GrangerWindow]
    c_mid: float
    dtw: list[DtwWindow]

    @property
    def dtw_mean(self) -> float:
        r = [w.r for w in self.dtw]
        return float(np.mean(r)) if r else math.nan


def price_representation(closes: np.ndarray, params: StudyParams) -> np.ndarray:
    if params.price_transform == "minmax":
        return rolling_minmax(closes, params.minmax_window)
    return rolling_log_return(closes, params.return_window)


def entity_consistency(
    sentiment: np.ndarray,
    closes: np.ndarray,
    n_articles: int,
    params: StudyParams,
    seed: int = 0,
    entity_id: str = "",
    diag: Counter | None = None,
) -> EntityConsistency | None:
    """All per-entity diagnostics; ``None`` when too few matched observations."""
    s_stat, _ = stationarize(np.asarray(sentiment, dtype=float))
    y_stat, _ = stationarize(price_representation(np.asarray(closes, dtype=float), params))
    matched = int(np.count_nonzero(~np.isnan(s_stat) & ~np.isnan(y_stat)))
    if matched < params.min_matched:
        if diag is not None:
            diag["entities_insufficient"] += 1
        return None
    ccf = None
    try:
        s_res, y_res, order = prewhiten_pair(s_stat, y_stat, params.arma_p_max, params.arma_q_max)
        ccf = prewhitened_ccf(s_res, y_res, params.ccf_max_lag)
        ccf.order = order
    except ValueError as exc:
        log.info("entity %s: CCF undefined (%s)", entity_id, exc)
        if diag is not None:
            diag["ccf_undefined"] += 1
    granger = rolling_granger(
        s_stat, y_stat, params.granger_window, params.granger_step, params.granger_lag, diag
    )
    try:
        c_mid = welch_coherence(s_stat, y_stat, params.spectral_nseg).c_mid
    except ValueError:
        c_mid = math.nan
    dtw = rolling_dtw(
        s_stat, y_stat, params.dtw_window, params.dtw_step, params.dtw_band,
        params.dtw_permutations, seed=seed, key=entity_id,
    )
    return EntityConsistency(entity_id, n_articles, matched, ccf, granger, c_mid, dtw)


def consistency_row(config_id: str, per_entity: Sequence[EntityConsistency], params: StudyParams) -> ConsistencyRow:
    """Collapse per-entity diagnostics into one unscored row."""
    ents = [e for e in per_entity if e is not None]
    nan = math.nan
    ccf_lag, ccf_rho = 0, nan
    with_ccf = [e for e in ents if e.ccf is not None]
    if with_ccf:
        lags = with_ccf[0].ccf.lags
        counts = [e.n_articles for e in with_ccf]
        rho_bar = np.array([
            fisher_aggregate([e.ccf.at(int(k)) for e in with_ccf], params.fisher_method, params.fisher_weights, counts)
            for k in lags
        ])
        i = _peak_index(lags, rho_bar)
        ccf_lag, ccf_rho = int(lags[i]), float(rho_bar[i])
    windows = [w for e in ents for w in e.granger]
    granger_pct = 100.0 * sum(w.significant_sy for w in windows) / len(windows) if windows else nan
    cm = [e.c_mid for e in ents if not math.isnan(e.c_mid)]
    mid = float(np.mean(cm)) if cm else nan
    with_dtw = [e for e in ents if not math.isnan(e.dtw_mean)]
    dtw = nan
    if with_dtw:
        dtw = fisher_aggregate(
            [e.dtw_mean for e in with_dtw], params.fisher_method, params.fisher_weights,
            [e.n_articles for e in with_dtw],
        )
    return ConsistencyRow(config_id, len(ents), ccf_lag, ccf_rho, granger_pct, mid, dtw)


def config_consistency(
    config_id: str,
    run: PipelineRun,
    prices: PricePanel,
    params: StudyParams,
    seed: int = 0,
) -> tuple[ConsistencyRow, list[EntityConsistency]]:
    per = []
    for ent, staged in run.series.items():
        s = staged.stage(run.config.output_stage)
        closes = prices.aligned(ent, run.grid)
        try:
            res = entity_consistency(
                s.values, closes, int(s.counts.sum()), params, seed, ent, run.diagnostics
            )
        except Exception as exc:  # noqa: BLE001
            log.warning("entity %s: consistency failed: %s", ent, exc)
            run.errors[ent] = f"{type(exc).__name__}: {exc}"
            continue
        if res is not None:
            per.append(res)
    return consistency_row(config_id, per, params), per


def run_consistency_study(
    sweep: SweepSpec,
    articles: ArticleInput,
    prices: PricePanel,
    params: StudyParams = StudyParams(),
    seed: int = 0,
    grid: GridSpec | None = None,
) -> list[ConsistencyRow]:
    """Score every configuration and return rows ranked by composite score."""
    by_entity = _by_entity(articles)
    if grid is None:
        grid = sweep.base.grid.build(_all_articles(by_entity))
    rows = []
    for i, cfg in enumerate(sweep):
        run = run_pipeline(cfg, by_entity, grid)
        rows.append(config_consistency(sweep.label(i), run, prices, params, seed)[0])
    return rank_rows(composite_score(rows))


# --------------------------------------------------------------------------
# result trees
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def series_csv(staged: StagedSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "label", "count", "aggregated", "filled", "smoothed"])
    a = staged.aggregated
    for k in range(len(a)):
        w.writerow([
            k, a.grid.label(k).isoformat(), int(a.counts[k]),
            _fmt(a.values[k]), _fmt(staged.filled.values[k]), _fmt(staged.smoothed.values[k]),
        ])
    return buf.getvalue()


@dataclass
class ConfigResult:
    label: str
    series: dict[str, str]
    metrics: str
    errors: dict[str, str]
    row: ConsistencyRow | None


_WORKER: dict = {}


def _init_worker(state: dict) -> None:
    _WORKER.clear()
    _WORKER.update(state)


def _run_one(item: tuple[str, PipelineConfig]) -> ConfigResult:
    label, cfg = item
    st = _WORKER
    run = run_pipeline(cfg, st["articles"], st["grid"])
    summaries = summarise_metrics(run_metrics(run))
    metrics = {
        "config_id": label,
        "config_digest": cfg.digest(),
        "summaries": {k: (v.to_dict() if v is not None else None) for k, v in summaries.items()},
        "diagnostics": dict(sorted(run.diagnostics.items())),
    }
    row = None
    if st["prices"] is not None:
        row, _ = config_consistency(label, run, st["prices"], st["params"], st["seed"])
        metrics["diagnostics"] = dict(sorted(run.diagnostics.items()))
    metrics["errors"] = dict(sorted(run.errors.items()))
    return ConfigResult(
        label,
        {e: series_csv(s) for e, s in run.series.items()},
        json.dumps(metrics, indent=2, sort_keys=True, default=_json_default) + "\n",
        run.errors,
        row,
    )


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def manifest_csv(sweep: SweepSpec) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config_id", "index", "digest", "description", "config"])
    for i, cfg in enumerate(sweep):
        w.writerow([
            sweep.label(i), i, cfg.digest(), cfg.describe(),
            json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")),
        ])
    return buf.getvalue()


def run_sweep(
    sweep: SweepSpec,
    articles: ArticleInput,
    out_dir: str | Path,
    prices: PricePanel | None = None,
    params: StudyParams = StudyParams(),
    seed: int = 0,
    jobs: int = 1,
    grid: GridSpec | None = None,
) -> list[ConfigResult]:
    """Run every configuration and write the result tree under ``out_dir``.

    The tree holds ``manifest.csv``, ``series/<config>/<entity>.csv``,
    ``metrics/<config>.json`` and, with prices, ``consistency.csv``.
    Results are merged in enumeration order, so ``jobs`` never changes the
    files written.
    """
    by_entity = _by_entity(articles)
    if grid is None:
        grid = sweep.base.grid.build(_all_articles(by_entity))
    state = {"articles": by_entity, "grid": grid, "prices": prices, "params": params, "seed": seed}
    items = [(sweep.label(i), cfg) for i, cfg in enumerate(sweep)]
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(state,)) as ex:
            results = list(ex.map(_run_one, items, chunksize=max(1, len(items) // (4 * jobs))))
    else:
        _init_worker(state)
        results = [_run_one(it) for it in items]

    out = Path(out_dir)
    (out / "series").mkdir(parents=True, exist_ok=True)
    (out / "metrics").mkdir(parents=True, exist_ok=True)
    _write(out / "manifest.csv", manifest_csv(sweep))
    for res in results:
        d = out / "series" / res.label
        d.mkdir(parents=True, exist_ok=True)
        for ent, text in res.series.items():
            _write(d / f"{_safe_name(ent)}.csv", text)
        _write(out / "metrics" / f"{res.label}.json", res.metrics)
    if prices is not None:
        rows = rank_rows(composite_score([r.row for r in results if r.row is not None]))
        _write(out / "consistency.csv", rows_to_csv(rows))
    return results


def _safe_name(entity: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in entity) or "_"


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


__all__ = [
    "DesignRow",
    "EntityConsistency",
    "PipelineRun",
    "Scope",
    "StagedSeries",
    "config_consistency",
    "consistency_row",
    "design_rows_to_csv",
    "entity_consistency",
    "manifest_csv",
    "reconstruct",
    "run_consistency_study",
    "run_design_study",
    "run_metrics",
    "run_pipeline",
    "run_sweep",
    "series_csv",
]
