"""Causal reconstruction of sparse news-sentiment series, label-free evaluation,
counterfactual stress tests and sentiment-price consistency diagnostics."""

from .aggregate import Recency, Reducer, Redundancy, Uncertainty, WeightConfig, aggregate_global, aggregate_local
from .config import PipelineConfig, Scope, StudyParams, SweepSpec, enumerate_configs, load_config_file
from .core import Article, GridSeries, GridSpec, InputError, PricePanel, ProbabilityTriple, Stage, build_grid
from .fill import FillConfig, causal_fill
from .pipeline import run_consistency_study, run_design_study, run_pipeline, run_sweep
from .smooth import ConfigError, SmootherConfig, smooth

__version__ = "0.1.0"

__all__ = [
    "Article",
    "ConfigError",
    "FillConfig",
    "GridSeries",
    "GridSpec",
    "InputError",
    "PipelineConfig",
    "PricePanel",
    "ProbabilityTriple",
    "Recency",
    "Reducer",
    "Redundancy",
    "Scope",
    "SmootherConfig",
    "Stage",
    "StudyParams",
    "SweepSpec",
    "Uncertainty",
    "WeightConfig",
    "aggregate_global",
    "aggregate_local",
    "build_grid",
    "causal_fill",
    "enumerate_configs",
    "load_config_file",
    "run_consistency_study",
    "run_design_study",
    "run_pipeline",
    "run_sweep",
    "smooth",
]
