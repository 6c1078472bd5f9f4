from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sentrecon.core import GridSeries, Stage
from sentrecon.evaluate import (
    cross_section_summary,
    entity_metrics,
    format_table,
    gap_drift,
    lag_proxy,
    summaries_to_json,
    summarise_metrics,
    total_variation,
    tv_ratios,
)
from sentrecon.fill import FillConfig, causal_fill

from .conftest import weekly_grid

NA = np.nan

finite_series = st.lists(st.floats(-10, 10), min_size=2, max_size=40).map(np.array)


def agg(values) -> GridSeries:
    v = np.asarray(values, dtype=float)
    return GridSeries("A", weekly_grid(v.shape[0]), v, np.where(np.isnan(v), 0, 1), Stage.AGGREGATED)


# -- total variation -------------------------------------------------------


def test_total_variation_examples():
    assert total_variation(np.full(5, 0.3)) == 0.0
    assert total_variation(np.array([0.0, 1.0, 0.0])) == 2.0
    assert total_variation(np.array([0.1, NA, 0.5, 0.2])) == pytest.approx(0.3)
    assert math.isnan(total_variation(np.array([0.1, NA, NA])))


@given(finite_series, st.floats(-5, 5), st.floats(-5, 5))
def test_total_variation_scale_and_shift(x, a, c):
    tv = total_variation(x)
    assert total_variation(a * x) == pytest.approx(abs(a) * tv, rel=1e-9, abs=1e-9)
    assert total_variation(x + c) == pytest.approx(tv, rel=1e-9, abs=1e-9)


def test_tv_ratio_examples():
    assert tv_ratios(2.0, 2.0, 2.0) == (1.0, 1.0, 1.0)
    fa, sf, sa = tv_ratios(10.0, 8.0, 4.0)
    assert (fa, sf, sa) == (pytest.approx(0.8), pytest.approx(0.5), pytest.approx(0.4))
    assert fa * sf == pytest.approx(sa)
    assert math.isnan(tv_ratios(0.0, 1.0, 1.0)[0])


# -- gap drift -------------------------------------------------------------


def test_gap_drift_fixtures():
    # fixture 1: hold fill is exactly zero
    s = agg([0.5, NA, NA, -0.2, NA])
    assert gap_drift(s, causal_fill(s, FillConfig("constant"))) == 0.0
    # fixture 2: linear decay H=2 over one gap of length 2 after 0.6
    s = agg([0.6, NA, NA, 0.1])
    assert gap_drift(s, causal_fill(s, FillConfig("linear_decay", 2))) == pytest.approx(0.45)
    # fixture 3: two gaps, H=4: deviations 0.2, 0.4 after 0.8 and 0.1 after -0.4
    s = agg([0.8, NA, NA, -0.4, NA, 0.0])
    expected = (0.8 * 0.25 + 0.8 * 0.5 + 0.4 * 0.25) / 3
    assert gap_drift(s, causal_fill(s, FillConfig("linear_decay", 4))) == pytest.approx(expected)


def test_gap_drift_undefined_without_gaps():
    s = agg([0.1, 0.2, 0.3])
    assert math.isnan(gap_drift(s, causal_fill(s)))
    s = agg([NA, NA, 0.3])  # leading gap has no earlier observation
    assert math.isnan(gap_drift(s, causal_fill(s)))


# -- lag proxy -------------------------------------------------------------


def test_lag_proxy_identity():
    x = np.random.default_rng(0).normal(size=30)
    rho, lag = lag_proxy(x, x)
    assert rho == pytest.approx(1.0) and lag == 0


def test_lag_proxy_recovers_shift_of_two():
    rng = np.random.default_rng(4)
    f = np.linspace(0, 3, 80) + rng.normal(0, 0.4, 80)
    s = np.full(80, NA)
    s[2:] = f[:-2]
    rho, lag = lag_proxy(f, s)
    assert lag == 2 and rho == pytest.approx(1.0)


def test_lag_proxy_reports_max_even_if_negative():
    x = np.sin(np.arange(40) * 0.37) + np.arange(40) * 0.01
    rho, lag = lag_proxy(x, -x)
    assert -1.0 <= rho < 1.0
    assert lag in (0, 1, 2)


def test_lag_proxy_minimum_overlap_and_zero_variance():
    x = np.arange(7, dtype=float)
    assert lag_proxy(x, x) == (pytest.approx(float("nan"), nan_ok=True), -1)
    rho, lag = lag_proxy(np.ones(20), np.arange(20.0))
    assert math.isnan(rho) and lag == -1


@given(st.lists(st.floats(-1, 1), min_size=8, max_size=40).map(np.array).filter(lambda x: x.std() > 1e-3))
def test_lag_proxy_self_is_one_at_zero(x):
    rho, lag = lag_proxy(x, x)
    assert rho == pytest.approx(1.0) and lag == 0


# -- summaries -------------------------------------------------------------


def test_summary_examples():
    s = cross_section_summary([0.7])
    assert (s.median, s.mean, s.q10, s.q90, s.iqr, s.std) == (0.7, 0.7, 0.7, 0.7, 0.0, 0.0)
    s = cross_section_summary([1, 2, 3, 4, 5, float("nan")])
    assert s.median == 3 and s.mean == 3 and s.n_excluded == 1 and s.n_entities == 5
    with pytest.raises(ValueError):
        cross_section_summary([float("nan")])


def test_summary_uniform_quantiles():
    s = cross_section_summary(np.random.default_rng(2).uniform(0, 1, 200))
    assert abs(s.q10 - 0.1) <= 0.05 and abs(s.q90 - 0.9) <= 0.05


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.randoms())
def test_summary_permutation_invariant_and_ordered(vals, r):
    a = cross_section_summary(vals)
    shuffled = list(vals)
    r.shuffle(shuffled)
    b = cross_section_summary(shuffled)
    assert a.row() == pytest.approx(b.row())
    assert a.q10 <= a.median + 1e-9 and a.median <= a.q90 + 1e-9
    assert a.iqr >= 0 and a.std >= 0


def test_entity_metrics_and_reporting_block():
    s = agg([0.5, NA, -0.2, 0.1, NA, 0.3, 0.0, 0.4, -0.1, 0.2, 0.6])
    f = causal_fill(s)
    m = entity_metrics(s, f, f.with_values(f.values, Stage.SMOOTHED))
    assert m.ratio_sf == pytest.approx(1.0)
    assert m.gap_drift == 0.0 and m.abs_lag == 0
    summ = summarise_metrics([m, m])
    assert summ["ratio_sa"].median == pytest.approx(m.ratio_sa)
    assert '"ratio_sa"' in summaries_to_json(summ)
    assert "median" in format_table([(k, v.row()) for k, v in summ.items() if v is not None])
