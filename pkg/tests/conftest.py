from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sentrecon.core import Article, ProbabilityTriple, build_grid
from sentrecon.synth import SynthParams, make_panel

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

T0 = datetime(2021, 1, 2, tzinfo=timezone.utc)  # a Saturday: W-FRI weeks start here


def article(
    ts: datetime | float,
    score: float,
    entity: str = "A",
    category: str = "c0",
    embedding=None,
    neutral: float = 0.0,
    title: str | None = None,
) -> Article:
    """Article with a given score; ``ts`` may be days after ``T0``."""
    if not isinstance(ts, datetime):
        ts = T0 + timedelta(days=float(ts))
    emb = None if embedding is None else tuple(float(v) for v in embedding)
    return Article(entity, ts, ProbabilityTriple.from_score(score, neutral), category, emb, title)


def weekly_grid(n_bins: int):
    return build_grid(T0, T0 + timedelta(days=7 * n_bins), "weekly", "FRI")


@pytest.fixture(scope="session")
def small_panel():
    return make_panel(SynthParams(n_entities=4, n_bins=40), seed=3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


# acceptance verdict lines, echoed once more in the terminal summary
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
