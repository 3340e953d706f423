from opscore.survival.cox import (
    baseline_cumulative_hazard,
    censoring_survival,
    cox_partial_loglik,
    fit_censoring_models,
    fit_cox_censoring,
    ipcw_weights,
)

__all__ = [
    "baseline_cumulative_hazard",
    "censoring_survival",
    "cox_partial_loglik",
    "fit_censoring_models",
    "fit_cox_censoring",
    "ipcw_weights",
]
