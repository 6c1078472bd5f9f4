from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from sentrecon.aggregate import Recency, WeightConfig
from sentrecon.config import PipelineConfig, Scope, StudyParams, SweepSpec
from sentrecon.consistency.aggregation import rows_from_csv
from sentrecon.core import Stage
from sentrecon.evaluate import total_variation
from sentrecon.fill import FillConfig
from sentrecon.pipeline import (
    consistency_row,
    design_rows_to_csv,
    run_consistency_study,
    run_design_study,
    run_pipeline,
    run_sweep,
)
from sentrecon.smooth import SmootherConfig
from sentrecon.synth import SynthParams, make_panel

from .conftest import article

FAST = StudyParams(dtw_permutations=40)
WEIGHTS = {"ccf_rho": 0.4, "granger_sp_pct": 0.3, "mid_coh": 0.2, "dtw_mean": 0.1}


def test_passthrough_config_returns_aggregated_series(small_panel):
    cfg = PipelineConfig(fill=FillConfig("none"), smoother=SmootherConfig("none"), output_stage="aggregated")
    run = run_pipeline(cfg, small_panel.articles, small_panel.grid)
    for s in run.series.values():
        np.testing.assert_array_equal(s.filled.values, s.aggregated.values)
        np.testing.assert_array_equal(s.smoothed.values, s.aggregated.values)
    assert all(v.stage is Stage.AGGREGATED for v in run.output().values())


def test_all_three_stages_are_kept(small_panel):
    run = run_pipeline(PipelineConfig(), small_panel.articles, small_panel.grid)
    assert set(run.series) == {"E0", "E1", "E2", "E3"}
    s = run.series["E0"]
    assert (s.aggregated.stage, s.filled.stage, s.smoothed.stage) == (Stage.AGGREGATED, Stage.FILLED, Stage.SMOOTHED)
    assert len(s.aggregated) == small_panel.grid.n_bins


@pytest.mark.parametrize("method", ["kalman", "kalman_arctanh", "kalman_count", "kalman_arctanh_count"])
def test_kalman_smoothing_reduces_total_variation(method):
    panel = make_panel(SynthParams(n_entities=6, n_bins=60), seed=5)
    run = run_pipeline(PipelineConfig(smoother=SmootherConfig(method)), panel.articles, panel.grid)
    for s in run.series.values():
        assert total_variation(s.smoothed.values) <= total_variation(s.filled.values) + 1e-12


def test_rerun_is_bit_identical(small_panel):
    cfg = PipelineConfig(weights=WeightConfig(uncertainty="entropy", redundancy="dedup"))
    a = run_pipeline(cfg, small_panel.articles, small_panel.grid)
    b = run_pipeline(cfg, list(small_panel.articles), small_panel.grid)
    for e in a.series:
        for st in Stage:
            assert a.series[e].stage(st).values.tobytes() == b.series[e].stage(st).values.tobytes()


def test_removing_an_entity_changes_no_other(small_panel):
    cfg = PipelineConfig()
    full = run_pipeline(cfg, small_panel.articles, small_panel.grid)
    part = run_pipeline(cfg, [a for a in small_panel.articles if a.entity_id != "E1"], small_panel.grid)
    assert "E1" not in part.series
    for e, s in part.series.items():
        np.testing.assert_array_equal(s.smoothed.values, full.series[e].smoothed.values)


def test_bad_entity_is_isolated(small_panel):
    # an entity without embeddings fails under dedup with the fallback disabled
    bad = [article(1.0, 0.3, entity="ZZ"), article(2.0, 0.1, entity="ZZ")]
    cfg = PipelineConfig(weights=WeightConfig(redundancy="dedup", fallback_embedder=False))
    run = run_pipeline(cfg, list(small_panel.articles) + bad, small_panel.grid)
    assert "ZZ" in run.errors and "ZZ" not in run.series
    assert set(run.series) == {"E0", "E1", "E2", "E3"}


def test_grid_is_inferred_from_articles(small_panel):
    run = run_pipeline(PipelineConfig(), small_panel.articles)
    assert run.grid.n_bins >= small_panel.grid.n_bins - 1
    assert run.grid.edges[0] <= min(a.epoch for a in small_panel.articles)


# -- design study ----------------------------------------------------------


def design_sweep(**kw) -> SweepSpec:
    return SweepSpec(
        uncertainty=("none", "entropy"),
        redundancy=(("none", 1.0), ("dedup", 1.0)),
        recency=(Recency(), Recency("tau", 5.0)),
        fill=(FillConfig("constant"), FillConfig("linear_decay", 4)),
        smoother=(SmootherConfig("none"), SmootherConfig("ewma"), SmootherConfig("kalman_arctanh_count")),
        **kw,
    )


def test_design_study_baselines_carry_levels_and_variants_deltas(small_panel):
    rows = run_design_study(design_sweep(), small_panel.articles, small_panel.grid)
    stages = {r.stage for r in rows}
    assert stages == {"aggregation", "filling", "smoothing"}
    base = [r for r in rows if r.baseline]
    assert {(r.stage, r.metric) for r in base} >= {("aggregation", "TV"), ("filling", "TV"), ("smoothing", "TV")}
    tv_base = next(r for r in base if r.stage == "smoothing" and r.metric == "TV")
    assert tv_base.variant == "none (baseline)" and tv_base.values[0] > 0  # a level, not a delta
    for r in rows:
        if r.stage == "smoothing" and r.metric == "TV" and not r.baseline:
            assert r.values[0] < 0  # smoothing lowers TV relative to the level
    gd = [r for r in rows if r.metric == "GD"]
    assert gd[0].variant == "constant" and gd[0].baseline
    assert gd[0].values[0] == 0.0  # hold fill has zero gap drift
    assert design_rows_to_csv(rows).startswith("stage,scope,variant,metric,baseline,median")


def test_design_study_variant_equal_to_baseline_gives_zero_delta(small_panel):
    # EWMA with alpha = 1 is the identity, so it reproduces the no-smoothing baseline
    sw = SweepSpec(smoother=(SmootherConfig("none"), SmootherConfig("ewma", alpha=1.0)))
    rows = run_design_study(sw, small_panel.articles, small_panel.grid)
    for metric in ("TV", "lag", "rho"):
        base, var = [r for r in rows if r.stage == "smoothing" and r.metric == metric]
        assert base.baseline and not var.baseline
        assert all(v == 0.0 for v in var.values)
    # axes holding a single value produce only the baseline row
    assert len([r for r in rows if r.stage == "aggregation"]) == 1


def test_design_study_stronger_smoothing_lowers_tv_more(small_panel):
    sw = SweepSpec(smoother=tuple(SmootherConfig("ewma", alpha=a) for a in (0.8, 0.4, 0.1)))
    rows = run_design_study(sw, small_panel.articles, small_panel.grid)
    tv = [r.values[0] for r in rows if r.stage == "smoothing" and r.metric == "TV" and not r.baseline]
    assert tv[0] > tv[1] > tv[2]


def test_design_study_local_scope_rows(small_panel):
    sw = design_sweep(scope=(Scope(), Scope("local", "count_weighted_mean")))
    rows = run_design_study(sw, small_panel.articles, small_panel.grid)
    assert {r.scope for r in rows} == {"global", "local(count_weighted_mean)"}


# -- consistency study -----------------------------------------------------


def consistency_sweep() -> SweepSpec:
    return SweepSpec(smoother=tuple(SmootherConfig(m) for m in ("none", "ewma", "kalman_arctanh_count")))


@pytest.fixture(scope="module")
def planted():
    return make_panel(SynthParams(n_entities=5, n_bins=120), seed=2)


def test_consistency_recovers_planted_lag(planted):
    rows = run_consistency_study(consistency_sweep(), planted.articles, planted.prices, FAST, grid=planted.grid)
    assert [r.score for r in rows] == sorted((r.score for r in rows), reverse=True)
    assert rows[0].ccf_lag == 3
    assert all(abs(r.ccf_rho) <= 1 and -4 <= r.ccf_lag <= 4 for r in rows)
    assert all(r.n_entities == 5 for r in rows)


def test_consistency_null_panel_has_no_stable_lag():
    lags, rhos = [], []
    for seed in range(4):
        p = make_panel(SynthParams(n_entities=5, n_bins=120, price_beta=0.0), seed=seed)
        rows = run_consistency_study(
            SweepSpec(smoother=(SmootherConfig("ewma"),)), p.articles, p.prices, FAST, grid=p.grid
        )
        lags.append(rows[0].ccf_lag)
        rhos.append(abs(rows[0].ccf_rho))
    assert max(rhos) < 0.25
    assert len(set(lags)) > 1


def test_composite_score_recomputed_from_columns(planted):
    rows = run_consistency_study(consistency_sweep(), planted.articles, planted.prices, FAST, grid=planted.grid)
    cols = {k: np.array([getattr(r, k) for r in rows], dtype=float) for k in WEIGHTS}
    expected = np.zeros(len(rows))
    for k, w in WEIGHTS.items():
        c = cols[k]
        expected += w * (c - c.mean()) / c.std() if c.std() > 0 else 0.0
    np.testing.assert_allclose([r.score for r in rows], expected, atol=1e-10, rtol=0)


def test_entities_with_too_few_matched_observations_excluded(planted):
    rows = run_consistency_study(
        SweepSpec(), planted.articles, planted.prices, replace(FAST, min_matched=500), grid=planted.grid
    )
    assert rows[0].n_entities == 0 and math.isnan(rows[0].ccf_rho)


def test_empty_consistency_row():
    r = consistency_row("S_0", [], StudyParams())
    assert r.n_entities == 0 and math.isnan(r.granger_sp_pct)


# -- result trees ----------------------------------------------------------


def test_run_sweep_tree_layout(tmp_path, planted):
    sw = SweepSpec(smoother=(SmootherConfig("none"), SmootherConfig("kalman")))
    run_sweep(sw, planted.articles, tmp_path, planted.prices, FAST, grid=planted.grid)
    assert (tmp_path / "manifest.csv").read_text().splitlines()[0] == "config_id,index,digest,description,config"
    assert sorted(p.name for p in (tmp_path / "series").iterdir()) == ["S_0", "S_1"]
    assert sorted(p.name for p in (tmp_path / "series" / "S_0").iterdir()) == [f"E{i}.csv" for i in range(5)]
    assert sorted(p.name for p in (tmp_path / "metrics").iterdir()) == ["S_0.json", "S_1.json"]
    rows = rows_from_csv((tmp_path / "consistency.csv").read_text())
    assert {r.config_id for r in rows} == {"S_0", "S_1"}
    head = (tmp_path / "series" / "S_0" / "E0.csv").read_text().splitlines()[0]
    assert head == "bin,label,count,aggregated,filled,smoothed"


def test_run_sweep_without_prices_has_no_consistency_file(tmp_path, small_panel):
    run_sweep(SweepSpec(), small_panel.articles, tmp_path, grid=small_panel.grid)
    assert not (tmp_path / "consistency.csv").exists()
    assert (tmp_path / "metrics" / "S_0.json").exists()
