"""Market-consistency diagnostics for reconstructed sentiment series."""

from .aggregation import (
    ConsistencyRow,
    composite_score,
    fisher_aggregate,
    fisher_combined_pvalue,
    rank_rows,
    rows_to_csv,
)
from .arma import ArmaOrder, fit_arma, fit_arma_aic, fit_arma_order
from .ccf import CcfResult, entity_ccf, prewhiten_pair, prewhitened_ccf
from .dtw import dtw_align, dtw_pearson, permutation_pvalue, rolling_dtw
from .granger import GrangerWindow, granger_f, rolling_granger, var_aic_order
from .spectral import SpectralResult, band_of, welch_coherence
from .transforms import adf_test, rolling_log_return, rolling_minmax, stationarize

__all__ = [
    "ArmaOrder",
    "CcfResult",
    "ConsistencyRow",
    "GrangerWindow",
    "SpectralResult",
    "adf_test",
    "band_of",
    "composite_score",
    "dtw_align",
    "dtw_pearson",
    "entity_ccf",
    "fisher_aggregate",
    "fisher_combined_pvalue",
    "fit_arma",
    "fit_arma_aic",
    "fit_arma_order",
    "granger_f",
    "permutation_pvalue",
    "prewhiten_pair",
    "prewhitened_ccf",
    "rank_rows",
    "rolling_dtw",
    "rolling_granger",
    "rolling_log_return",
    "rolling_minmax",
    "rows_to_csv",
    "stationarize",
    "var_aic_order",
    "welch_coherence",
]
