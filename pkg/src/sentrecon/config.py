"""Pipeline configuration, sweep enumeration and config-file loading."""

from __future__ import annotations

import hashlib
import itertools
import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .aggregate import Recency, Reducer, Redundancy, Uncertainty, WeightConfig
from .core import WEEKDAYS, Article, GridSpec, Stage, build_grid
from .fill import FillConfig
from .smooth import ConfigError, SmootherConfig

__all__ = [
    "ConfigError",
    "GridParams",
    "PipelineConfig",
    "StudyParams",
    "SweepSpec",
    "Scope",
    "enumerate_configs",
    "load_config_file",
]


@dataclass(frozen=True)
class GridParams:
    """Grid parameters; empty ``start`` / ``end`` are inferred from the data."""

    start: str = ""
    end: str = ""
    frequency: str = "weekly"
    anchor: str = "FRI"

    def build(self, articles: Iterable[Article] = ()) -> GridSpec:
        start, end = self.start, self.end
        if not (start and end):
            lo, hi = _span(articles)
            if not start:
                start = _align_start(lo, self.frequency, self.anchor).isoformat()
            if not end:
                end = (datetime.combine(hi, time(), tzinfo=timezone.utc) + timedelta(days=1)).isoformat()
        return build_grid(start, end, self.frequency, self.anchor)


def _span(articles: Iterable[Article]) -> tuple[date, date]:
    days = [a.timestamp.date() for a in articles]
    if not days:
        raise ConfigError("grid start/end not configured and no articles to infer them from")
    return min(days), max(days)


def _align_start(day: date, frequency: str, anchor: str) -> date:
    """First day of the bin containing ``day`` so the first bin is complete."""
    if frequency == "weekly":
        back = (day.weekday() - WEEKDAYS[anchor.upper()] - 1) % 7
        return day - timedelta(days=back)
    if frequency == "monthly":
        return day.replace(day=1)
    if frequency == "quarterly":
        return day.replace(month=3 * ((day.month - 1) // 3) + 1, day=1)
    return day


@dataclass(frozen=True)
class Scope:
    """Aggregation scope: pool all categories, or reduce per-category series."""

    scope: str = "global"
    reducer: Reducer = Reducer.UNWEIGHTED_MEAN

    def __post_init__(self) -> None:
        if self.scope not in ("global", "local"):
            raise ConfigError(f"unknown aggregation scope {self.scope!r}")
        object.__setattr__(self, "reducer", Reducer(self.reducer))

    @property
    def label(self) -> str:
        return "global" if self.scope == "global" else f"local({self.reducer.value})"


@dataclass(frozen=True)
class PipelineConfig:
    scope: Scope = field(default_factory=Scope)
    grid: GridParams = field(default_factory=GridParams)
    weights: WeightConfig = field(default_factory=WeightConfig)
    fill: FillConfig = field(default_factory=FillConfig)
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    output_stage: Stage = Stage.SMOOTHED

    def __post_init__(self) -> None:
        object.__setattr__(self, "output_stage", Stage(self.output_stage))

    def to_dict(self) -> dict:
        return {
            "scope": {"scope": self.scope.scope, "reducer": self.scope.reducer.value},
            "grid": asdict(self.grid),
            "weights": self.weights.to_dict(),
            "fill": asdict(self.fill),
            "smoother": self.smoother.to_dict(),
            "output_stage": self.output_stage.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        try:
            return cls(
                scope=Scope(**d.get("scope", {})),
                grid=GridParams(**d.get("grid", {})),
                weights=WeightConfig.from_dict(d.get("weights", {})),
                fill=FillConfig(**d.get("fill", {})),
                smoother=SmootherConfig(**d.get("smoother", {})),
                output_stage=d.get("output_stage", Stage.SMOOTHED.value),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def digest(self) -> str:
        """sha256 over the canonical JSON form; paired runs assert it is unchanged."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def describe(self) -> str:
        w = self.weights
        red = w.redundancy.value if w.redundancy is not Redundancy.DEDUP else f"dedup(alpha={w.dedup_alpha:g})"
        return " | ".join(
            [w.uncertainty.value, red, w.recency.label, self.fill.label, self.smoother.label, self.scope.label]
        )


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

AXES = ("uncertainty", "redundancy", "recency", "fill", "smoother", "scope")
_LABEL = re.compile(r"^S_(\d+)$")


@dataclass(frozen=True)
class SweepSpec:
    """Grid of strategy choices, enumerated lexicographically over ``AXES``.

    Each redundancy entry is a ``(mode, alpha)`` pair.  Fields not covered by
    an axis come from ``base``.
    """

    uncertainty: tuple[Uncertainty, ...] = (Uncertainty.NONE,)
    redundancy: tuple[tuple[Redundancy, float], ...] = ((Redundancy.NONE, 1.0),)
    recency: tuple[Recency, ...] = (Recency(),)
    fill: tuple[FillConfig, ...] = (FillConfig(),)
    smoother: tuple[SmootherConfig, ...] = (SmootherConfig(),)
    scope: tuple[Scope, ...] = (Scope(),)
    base: PipelineConfig = field(default_factory=PipelineConfig)
    display_base: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "uncertainty", tuple(Uncertainty(u) for u in self.uncertainty))
        object.__setattr__(
            self, "redundancy", tuple((Redundancy(m), float(a)) for m, a in self.redundancy)
        )
        for name in AXES:
            if not getattr(self, name):
                raise ConfigError(f"sweep axis {name!r} is empty")
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.display_base not in (0, 1):
            raise ConfigError("display base must be 0 or 1")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(getattr(self, a)) for a in AXES)

    def __len__(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n

    def _build(self, choice: tuple) -> PipelineConfig:
        unc, (red, alpha), rec, fill, sm, scope = choice
        w = replace(self.base.weights, uncertainty=unc, redundancy=red, dedup_alpha=alpha, recency=rec)
        return replace(self.base, weights=w, fill=fill, smoother=sm, scope=scope)

    def __iter__(self) -> Iterator[PipelineConfig]:
        for choice in itertools.product(*(getattr(self, a) for a in AXES)):
            yield self._build(choice)

    def label(self, index: int) -> str:
        return f"S_{index + self.display_base}"

    def parse_label(self, label: str) -> int:
        m = _LABEL.match(label)
        if not m:
            raise ConfigError(f"not a strategy label: {label!r}")
        idx = int(m.group(1)) - self.display_base
        if not 0 <= idx < len(self):
            raise ConfigError(f"strategy {label} outside the sweep (size {len(self)})")
        return idx

    def config_at(self, index: int) -> PipelineConfig:
        if not 0 <= index < len(self):
            raise IndexError(index)
        pos = []
        for n in reversed(self.shape):
            pos.append(index % n)
            index //= n
        choice = tuple(getattr(self, a)[i] for a, i in zip(AXES, reversed(pos)))
        return self._build(choice)

    def index_of(self, cfg: PipelineConfig) -> int:
        w = cfg.weights
        coords = (
            self.uncertainty.index(w.uncertainty),
            self.redundancy.index((w.redundancy, float(w.dedup_alpha))),
            self.recency.index(w.recency),
            self.fill.index(cfg.fill),
            self.smoother.index(cfg.smoother),
            self.scope.index(cfg.scope),
        )
        idx = 0
        for c, n in zip(coords, self.shape):
            idx = idx * n + c
        return idx

    def to_dict(self) -> dict:
        return {
            "uncertainty": [u.value for u in self.uncertainty],
            "redundancy": [{"mode": m.value, "alpha": a} for m, a in self.redundancy],
            "recency": [asdict(r) for r in self.recency],
            "fill": [asdict(f) for f in self.fill],
            "smoother": [s.to_dict() for s in self.smoother],
            "scope": [{"scope": s.scope, "reducer": s.reducer.value} for s in self.scope],
            "display_base": self.display_base,
        }


def enumerate_configs(sweep: SweepSpec) -> list[tuple[str, PipelineConfig]]:
    return [(sweep.label(i), cfg) for i, cfg in enumerate(sweep)]


# --------------------------------------------------------------------------
# consistency-study parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyParams:
    ccf_max_lag: int = 4
    arma_p_max: int = 4
    arma_q_max: int = 2
    dtw_window: int = 52
    dtw_step: int = 4
    dtw_band: int = 8
    dtw_permutations: int = 500
    granger_window: int = 52
    granger_step: int = 4
    granger_lag: int | None = 2
    spectral_nseg: int = 52
    price_transform: str = "log_return"  # log_return | minmax
    minmax_window: int = 52
    return_window: int = 1
    fisher_method: str = "weighted"
    fisher_weights: str = "n2"
    min_matched: int = 52

    def __post_init__(self) -> None:
        if self.price_transform not in ("log_return", "minmax"):
            raise ConfigError(f"unknown price transform {self.price_transform!r}")
        if self.fisher_method not in ("mean", "weighted", "median"):
            raise ConfigError(f"unknown Fisher method {self.fisher_method!r}")
        if self.fisher_weights not in ("n", "sqrt", "log1p", "n2"):
            raise ConfigError(f"unknown Fisher weight family {self.fisher_weights!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and v < 1:
                raise ConfigError(f"{f.name} must be >= 1")


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------


def _take(d: dict, known: set[str], where: str) -> dict:
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(extra))}")
    return d


def _pipeline_from_table(t: dict) -> PipelineConfig:
    t = _take(dict(t), {"scope", "reducer", "grid", "weights", "fill", "smoother", "output_stage"}, "pipeline")
    d: dict[str, Any] = {
        "scope": {"scope": t.get("scope", "global"), "reducer": t.get("reducer", "unweighted_mean")},
        "grid": _take(dict(t.get("grid", {})), {f.name for f in fields(GridParams)}, "pipeline.grid"),
        "fill": _take(dict(t.get("fill", {})), {"rule", "horizon"}, "pipeline.fill"),
        "smoother": _take(
            dict(t.get("smoother", {})), {f.name for f in fields(SmootherConfig)}, "pipeline.smoother"
        ),
        "output_stage": t.get("output_stage", "smoothed"),
    }
    w = _take(dict(t.get("weights", {})), {f.name for f in fields(WeightConfig)}, "pipeline.weights")
    if "recency" in w and isinstance(w["recency"], dict):
        w["recency"] = _take(dict(w["recency"]), {"form", "value"}, "pipeline.weights.recency")
    d["weights"] = w
    return PipelineConfig.from_dict(d)


def _sweep_from_table(t: dict, base: PipelineConfig) -> SweepSpec:
    t = _take(dict(t), set(AXES) | {"display_base"}, "sweep")
    try:
        # axes not listed keep the base pipeline's single value
        w = base.weights
        kw: dict[str, Any] = {
            "base": base,
            "display_base": int(t.get("display_base", 0)),
            "uncertainty": (w.uncertainty,),
            "redundancy": ((w.redundancy, w.dedup_alpha),),
            "recency": (w.recency,),
            "fill": (base.fill,),
            "smoother": (base.smoother,),
            "scope": (base.scope,),
        }
        if "uncertainty" in t:
            kw["uncertainty"] = tuple(t["uncertainty"])
        if "redundancy" in t:
            kw["redundancy"] = tuple((r["mode"], r.get("alpha", 1.0)) for r in t["redundancy"])
        if "recency" in t:
            kw["recency"] = tuple(Recency(**r) for r in t["recency"])
        if "fill" in t:
            kw["fill"] = tuple(FillConfig(**f) for f in t["fill"])
        if "smoother" in t:
            kw["smoother"] = tuple(SmootherConfig(**s) for s in t["smoother"])
        if "scope" in t:
            kw["scope"] = tuple(Scope(**s) for s in t["scope"])
        return SweepSpec(**kw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[sweep]: {exc}") from None


@dataclass(frozen=True)
class ConfigFile:
    pipeline: PipelineConfig
    sweep: SweepSpec
    study: StudyParams
    seed: int = 0


def load_config_file(path: str | Path | None) -> ConfigFile:
    """Read a TOML config; a missing path yields all defaults.

    Sections: ``seed`` (top level), ``[pipeline]`` with optional
    ``grid`` / ``weights`` / ``fill`` / ``smoother`` sub-tables,
    ``[sweep]`` axis lists and ``[study]`` parameters.
    """
    if path is None:
        base = PipelineConfig()
        return ConfigFile(base, SweepSpec(base=base), StudyParams())
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    _take(doc, {"seed", "pipeline", "sweep", "study"}, "top level")
    base = _pipeline_from_table(doc.get("pipeline", {}))
    sweep = _sweep_from_table(doc.get("sweep", {}), base)
    st = _take(dict(doc.get("study", {})), {f.name for f in fields(StudyParams)}, "study")
    try:
        study = StudyParams(**st)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[study]: {exc}") from None
    return ConfigFile(base, sweep, study, int(doc.get("seed", 0)))
