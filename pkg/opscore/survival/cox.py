"""
Treatment-stratified Cox model for the censoring process and the IPCW weights built on it.

Within stratum j the censoring hazard is lambda_0j(t) exp(u'gamma_j); a subject has a
censoring event when its outcome went unobserved (r == 0), at time t_obs.
"""

from typing import Mapping, Sequence

import numpy as np

from opscore.core.exceptions import ConvergenceError, DataValidationError
from opscore.core.logger import survival_logger as logger
from opscore.glm.base import check_full_rank, newton_raphson
from opscore.schemas.dataset import CensoredOutcome, Dataset
from opscore.schemas.fit import CoxFit, IpcwWeights
from opscore.schemas.propensity import PropensityMatrix

SURVIVAL_FLOOR = 0.02


class _RiskSets:
    """Times sorted descending with, for every row, the end of its (tie-inclusive) risk set."""

    def __init__(self, time: np.ndarray, event: np.ndarray, u: np.ndarray):
        order = np.argsort(-time, kind="stable")
        self.time = time[order]
        self.event = event[order].astype(bool)
        self.u = u[order]
        self.last = np.searchsorted(-self.time, -self.time, side="right") - 1


def cox_partial_loglik(gamma: np.ndarray, time: np.ndarray, event: np.ndarray, u: np.ndarray):
    """Breslow log partial likelihood with gradient and Hessian, all divided by n."""
    rs = _RiskSets(np.asarray(time, dtype=float), np.asarray(event), np.asarray(u, dtype=float))
    return _loglik(rs, np.asarray(gamma, dtype=float))


def _loglik(rs: _RiskSets, gamma: np.ndarray):
    n, k = rs.u.shape
    eta = rs.u @ gamma
    # shift for numerical stability; cancels between numerator and risk-set sum
    shift = eta.max() if n else 0.0
    w = np.exp(eta - shift)
    s0 = np.cumsum(w)[rs.last]
    s1 = np.cumsum(w[:, None] * rs.u, axis=0)[rs.last]
    s2 = np.cumsum(w[:, None, None] * rs.u[:, :, None] * rs.u[:, None, :], axis=0)[rs.last]
    ev = rs.event
    mean_u = s1[ev] / s0[ev, None]
    value = float(np.sum(eta[ev] - shift - np.log(s0[ev]))) / n
    grad = np.sum(rs.u[ev] - mean_u, axis=0) / n
    hess = -np.sum(s2[ev] / s0[ev, None, None] - mean_u[:, :, None] * mean_u[:, None, :], axis=0) / n
    return value, grad, hess


def _breslow(rs: _RiskSets, gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jump times (ascending) and baseline cumulative hazard increments."""
    w = np.exp(rs.u @ gamma)
    s0 = np.cumsum(w)[rs.last]
    times = rs.time[rs.event]
    if times.size == 0:
        return np.zeros(0), np.zeros(0)
    jump_times, first = np.unique(times, return_index=True)
    deaths = np.bincount(np.searchsorted(jump_times, times), minlength=jump_times.size)
    at_risk = s0[rs.event][first]
    return jump_times, deaths / at_risk


def fit_cox_censoring(d: Dataset, u_columns: Sequence[int], stratum: int) -> CoxFit:
    """
    Cox model of the censoring time within treatment arm `stratum` (1-based) on covariates u_columns.

    Newton-Raphson on the Breslow partial likelihood (gradient norm < 1e-8); the baseline
    cumulative hazard is the Breslow estimator at the censoring-event times.
    """
    if not isinstance(d.outcome, CensoredOutcome):
        raise DataValidationError(["censoring model requires a censored outcome record"])
    rows = np.flatnonzero(d.z == stratum)
    columns = tuple(int(c) for c in u_columns)
    u = d.x[np.ix_(rows, list(columns))] if columns else np.zeros((rows.size, 0))
    time = d.outcome.t_obs[rows]
    event = d.outcome.r[rows] == 0

    if rows.size == 0 or not event.any():
        logger.warning(f"No censoring events in arm {stratum}; using a zero censoring hazard")
        return CoxFit(stratum=stratum, columns=columns, gamma=np.zeros(len(columns)), jump_times=[], increments=[])

    rs = _RiskSets(time, event, u)
    gamma = np.zeros(len(columns))
    n_iter = 0
    if columns:
        check_full_rank(u, intercept=True)
        result = newton_raphson(lambda g: _loglik(rs, g), gamma)
        if not result.converged:
            raise ConvergenceError(
                f"Cox model for arm {stratum} did not converge (gradient norm {result.grad_norm:.2e} "
                f"after {result.n_iter} iterations)"
            )
        gamma, n_iter = result.x, result.n_iter
    jump_times, increments = _breslow(rs, gamma)
    logger.debug(f"Cox censoring fit | arm={stratum} n={rows.size} events={int(event.sum())} iterations={n_iter}")
    return CoxFit(
        stratum=stratum,
        columns=columns,
        gamma=gamma,
        jump_times=jump_times,
        increments=increments,
        n_events=int(event.sum()),
        n_iter=n_iter,
    )


def baseline_cumulative_hazard(fit: CoxFit, t: np.ndarray | float) -> np.ndarray:
    """Right-continuous step evaluation of the Breslow cumulative hazard; 0 before the first jump."""
    t = np.asarray(t, dtype=float)
    if fit.jump_times.size == 0:
        return np.zeros_like(t)
    cum = np.concatenate([[0.0], fit.cumulative_hazard])
    return cum[np.searchsorted(fit.jump_times, t, side="right")]


def censoring_survival(fit: CoxFit, t: np.ndarray | float, u: np.ndarray) -> np.ndarray:
    """S_C(t | u) = exp(-Lambda_0(t) exp(u'gamma)); u is one row or a matrix of rows on fit.columns."""
    u = np.asarray(u, dtype=float)
    risk = np.exp(u @ fit.gamma) if fit.gamma.size else (np.ones(u.shape[0]) if u.ndim == 2 else 1.0)
    return np.exp(-baseline_cumulative_hazard(fit, t) * risk)


def fit_censoring_models(d: Dataset, u_columns: Sequence[int]) -> dict[int, CoxFit]:
    """One Cox censoring fit per arm."""
    return {j: fit_cox_censoring(d, u_columns, j) for j in range(1, d.J + 1)}


def ipcw_weights(ps: PropensityMatrix, cox_fits: Mapping[int, CoxFit], d: Dataset) -> IpcwWeights:
    """
    w*_i = 1 / (pi_{Z_i}(X_i) * max(S_C(min(t_obs_i, d) | U_i, Z_i), 0.02)).
    """
    if not isinstance(d.outcome, CensoredOutcome):
        raise DataValidationError(["IPCW weights require a censored outcome record"])
    pi_z = ps.for_arms(d.z)
    follow_up = d.outcome.follow_up
    surv = np.ones(d.n)
    for arm, fit in cox_fits.items():
        rows = np.flatnonzero(d.z == arm)
        if rows.size == 0:
            continue
        u = d.x[np.ix_(rows, list(fit.columns))] if fit.columns else np.zeros((rows.size, 0))
        surv[rows] = censoring_survival(fit, follow_up[rows], u)
    floored = np.maximum(surv, SURVIVAL_FLOOR)
    n_floored = int(np.sum(surv < SURVIVAL_FLOOR))
    if n_floored:
        logger.info(f"IPCW | {n_floored} censoring survival values floored at {SURVIVAL_FLOOR}")
    return IpcwWeights(w_star=1.0 / (pi_z * floored), pi_z=pi_z, surv=surv)
