from __future__ import annotations

import json
import warnings
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sentrecon.core import (
    GridSeries,
    InputError,
    OutOfHorizonWarning,
    ProbabilityTriple,
    Stage,
    assign_bins,
    build_grid,
    read_articles,
    read_prices_csv,
    score_article,
    write_articles_jsonl,
)

from .conftest import T0, article, weekly_grid

probs = st.tuples(
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)
).filter(lambda t: sum(t) > 1e-3).map(lambda t: tuple(v / sum(t) for v in t))


# -- scoring ---------------------------------------------------------------


@pytest.mark.parametrize(
    "triple, expected",
    [((1, 0, 0), 1.0), ((1 / 3, 1 / 3, 1 / 3), 0.0), ((0.7, 0.1, 0.2), 0.6)],
)
def test_score_article_examples(triple, expected):
    assert score_article(ProbabilityTriple.from_raw(*triple)) == pytest.approx(expected, abs=1e-12)


@given(probs)
def test_score_antisymmetric_under_polarity_swap(t):
    a = ProbabilityTriple.from_raw(*t)
    b = ProbabilityTriple.from_raw(t[1], t[0], t[2])
    assert score_article(a) == pytest.approx(-score_article(b), abs=1e-12)
    assert -1.0 <= score_article(a) <= 1.0


def test_small_sum_drift_is_renormalised():
    t = ProbabilityTriple.from_raw(0.5, 0.3, 0.2 + 5e-7)
    assert t.p_pos + t.p_neg + t.p_neu == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("bad", [(0.5, 0.3, 0.3), (1.2, 0.0, -0.2), (float("nan"), 0.5, 0.5)])
def test_invalid_triples_rejected(bad):
    with pytest.raises(InputError):
        ProbabilityTriple.from_raw(*bad)


@given(st.floats(-1, 1), st.floats(0, 1))
def test_from_score_hits_target(score, neutral):
    t = ProbabilityTriple.from_score(score, neutral)
    assert score_article(t) == pytest.approx(score, abs=1e-12)


def test_article_rejects_naive_timestamp_and_zero_embedding():
    with pytest.raises(InputError):
        article(datetime(2021, 1, 5), 0.1)
    with pytest.raises(InputError):
        article(1.0, 0.1, embedding=[0.0, 0.0])


# -- grids -----------------------------------------------------------------


def test_daily_grid_day_count():
    assert build_grid("2025-01-01", "2025-01-15", "daily").n_bins == 14


def test_empty_horizon_rejected():
    with pytest.raises(ValueError):
        build_grid("2025-01-01", "2025-01-01", "weekly")


def _calendar_walk_weekly(start: date, end: date, weekday: int) -> list[date]:
    """Right-edge days by walking the calendar one day at a time."""
    rights, d = [], start
    while d < end:
        if d.weekday() == weekday:
            rights.append(d + timedelta(days=1))
        d += timedelta(days=1)
    if not rights or rights[-1] < end:
        rights.append(end)
    else:
        rights[-1] = end
    return rights


def test_weekly_friday_grid_matches_calendar_walk():
    g = build_grid("2024-11-01", "2026-02-28", "weekly", "FRI")
    oracle = _calendar_walk_weekly(date(2024, 11, 1), date(2026, 2, 28), 4)
    rights = [r.date() for _, r in g.bins]
    assert rights == oracle
    for _, r in g.bins[:-1]:
        assert (r - timedelta(days=1)).weekday() == 4


@given(
    st.integers(0, 3000),
    st.integers(1, 400),
    st.sampled_from(["daily", "weekly", "monthly", "quarterly"]),
    st.sampled_from(["MON", "WED", "FRI", "SUN"]),
)
def test_bins_partition_horizon(offset, span, freq, anchor):
    start = datetime(2018, 1, 1, tzinfo=timezone.utc) + timedelta(days=offset)
    g = build_grid(start, start + timedelta(days=span), freq, anchor)
    e = g.edges
    assert e[0] == int(start.timestamp())
    assert e[-1] == int((start + timedelta(days=span)).timestamp())
    assert all(b > a for a, b in zip(e, e[1:]))


# -- bin assignment --------------------------------------------------------


def test_left_edge_in_bin_right_edge_in_next():
    g = weekly_grid(3)
    left = article(g.bin_left(1), 0.1)
    right = article(g.bin_right(1), 0.1)
    asg = assign_bins([left, right], g)
    assert asg.bin_of.tolist() == [1, 2]


def test_random_timestamps_partition_counts():
    g = weekly_grid(20)
    rng = np.random.default_rng(0)
    secs = rng.integers(g.edges[0], g.edges[-1], 100)
    arts = [article(datetime.fromtimestamp(int(s), tz=timezone.utc), 0.0) for s in secs]
    asg = assign_bins(arts, g)
    assert asg.counts.sum() == 100
    members = asg.members()
    assert sorted(i for m in members for i in m) == list(range(100))
    for k, m in enumerate(members):
        for i in m:
            assert g.edges[k] <= arts[i].epoch < g.edges[k + 1]


def test_out_of_horizon_warns_or_raises():
    g = weekly_grid(2)
    arts = [article(1.0, 0.1), article(30.0, 0.1)]
    with pytest.warns(OutOfHorizonWarning):
        asg = assign_bins(arts, g)
    assert asg.rejected == [1]
    with pytest.raises(InputError):
        assign_bins(arts, g, strict=True)


# -- series invariants -----------------------------------------------------


def test_grid_series_invariants():
    g = weekly_grid(3)
    with pytest.raises(ValueError):
        GridSeries("A", g, [0.1, 0.2], [1, 1], Stage.AGGREGATED)
    with pytest.raises(ValueError):
        GridSeries("A", g, [0.1, 0.2, 0.3], [1, 0, 1], Stage.AGGREGATED)
    with pytest.raises(ValueError):
        GridSeries("A", g, [0.1, 2.0, 0.3], [1, 1, 1], Stage.FILLED)
    s = GridSeries("A", g, [0.1, 2.0, 0.3], [1, 1, 1], Stage.SMOOTHED, bounded=False)
    assert not s.values.flags.writeable


# -- ingestion -------------------------------------------------------------


def test_jsonl_round_trip(tmp_path):
    arts = [article(1.5, 0.3, embedding=[1.0, 2.0]), article(9.0, -0.2, entity="B", title="x")]
    p = tmp_path / "a.jsonl"
    write_articles_jsonl(arts, p)
    assert read_articles(p) == arts


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "a.jsonl"
    good = {"entity_id": "A", "ts": "2021-01-04T00:00:00Z", "p_pos": 0.5, "p_neg": 0.2, "p_neu": 0.3, "category": "c"}
    p.write_text(json.dumps(good) + "\n{not json\n")
    with pytest.raises(InputError, match=":2"):
        read_articles(p)


def test_csv_articles_and_prices(tmp_path):
    a = tmp_path / "a.csv"
    a.write_text("entity_id,ts,p_pos,p_neg,p_neu,category\nA,2021-01-04T10:00:00Z,0.6,0.1,0.3,c\n")
    arts = read_articles(a)
    assert arts[0].score == pytest.approx(0.5)
    p = tmp_path / "p.csv"
    p.write_text("entity_id,date,close\nA,2021-01-08,10.0\nA,2021-01-15,11.0\n")
    panel = read_prices_csv(p)
    closes = panel.aligned("A", weekly_grid(3))
    assert closes[:2].tolist() == [10.0, 11.0] and np.isnan(closes[2])
    p.write_text("entity_id,date,close\nA,2021-01-08,-1\n")
    with pytest.raises(InputError):
        read_prices_csv(p)
