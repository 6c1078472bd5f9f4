from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sentrecon.core import GridSeries, Stage
from sentrecon.evaluate import gap_drift
from sentrecon.fill import FillConfig, causal_fill

from .conftest import weekly_grid

NA = np.nan
RULES = [FillConfig("none"), FillConfig("constant"), FillConfig("linear_decay", 1), FillConfig("linear_decay", 3)]

series_values = st.lists(st.one_of(st.none(), st.floats(-1, 1)), min_size=1, max_size=30).map(
    lambda xs: np.array([np.nan if x is None else x for x in xs])
)


def agg(values) -> GridSeries:
    v = np.asarray(values, dtype=float)
    counts = np.where(np.isnan(v), 0, 1)
    return GridSeries("A", weekly_grid(v.shape[0]), v, counts, Stage.AGGREGATED)


@pytest.mark.parametrize("cfg", RULES)
def test_fully_observed_series_unchanged(cfg):
    v = [0.1, -0.2, 0.3, 0.5]
    np.testing.assert_array_equal(causal_fill(agg(v), cfg).values, v)


def test_constant_fill_carries_last_value():
    out = causal_fill(agg([0.4, NA, NA, NA]), FillConfig("constant")).values
    np.testing.assert_array_equal(out, [0.4, 0.4, 0.4, 0.4])


def test_linear_decay_h2():
    out = causal_fill(agg([0.6, NA, NA, NA]), FillConfig("linear_decay", 2)).values
    np.testing.assert_allclose(out, [0.6, 0.3, 0.0, 0.0], atol=1e-15)


def test_leading_prefix_stays_missing_and_counts_copied():
    s = agg([NA, NA, 0.2, NA])
    out = causal_fill(s, FillConfig("constant"))
    assert np.isnan(out.values[:2]).all() and out.values[3] == 0.2
    np.testing.assert_array_equal(out.counts, s.counts)
    assert out.stage is Stage.FILLED


def test_none_rule_is_identity():
    v = [NA, 0.1, NA, 0.3]
    np.testing.assert_array_equal(causal_fill(agg(v), FillConfig("none")).values, v)


def test_decay_measured_from_last_true_observation():
    # the carried value is never re-anchored on a filled bin
    out = causal_fill(agg([0.8, NA, NA, NA, NA]), FillConfig("linear_decay", 4)).values
    np.testing.assert_allclose(out, [0.8, 0.6, 0.4, 0.2, 0.0])


def test_rejects_non_aggregated_input():
    s = agg([0.1, 0.2])
    with pytest.raises(ValueError):
        causal_fill(causal_fill(s), FillConfig())


@pytest.mark.parametrize("cfg", RULES)
@given(v=series_values, k=st.integers(1, 30))
def test_prefix_causality(cfg, v, k):
    k = min(k, v.shape[0])
    full = causal_fill(agg(v), cfg).values[:k]
    part = causal_fill(agg(v[:k]), cfg).values
    np.testing.assert_array_equal(full, part)


@pytest.mark.parametrize("cfg", RULES)
def test_staleness_starts_at_one_and_is_nonincreasing(cfg):
    g = cfg.staleness(np.arange(0, 12))
    assert g[0] == 1.0
    assert np.all(np.diff(g) <= 0)
    assert np.all(g >= 0)


@given(series_values)
def test_constant_fill_gap_drift_is_zero(v):
    s = agg(v)
    gd = gap_drift(s, causal_fill(s, FillConfig("constant")))
    assert np.isnan(gd) or gd == 0.0


def test_invalid_rules_rejected():
    with pytest.raises(ValueError):
        FillConfig("backward")
    with pytest.raises(ValueError):
        FillConfig("linear_decay", 0)
