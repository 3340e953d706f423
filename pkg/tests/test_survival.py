import numpy as np
import pytest

from opscore.core.exceptions import DataValidationError
from opscore.schemas.dataset import CensoredOutcome, Dataset
from opscore.schemas.fit import CoxFit
from opscore.schemas.propensity import PropensityMatrix
from opscore.survival.cox import (
    SURVIVAL_FLOOR,
    baseline_cumulative_hazard,
    censoring_survival,
    cox_partial_loglik,
    fit_censoring_models,
    fit_cox_censoring,
    ipcw_weights,
)


def test_gradient_and_hessian_match_finite_differences():
    rng = np.random.default_rng(0)
    n = 60
    u = rng.standard_normal((n, 2))
    time = np.round(rng.exponential(1.0, size=n), 1)  # rounding creates ties
    event = rng.random(n) < 0.6
    gamma = np.array([0.3, -0.2])
    value, grad, hess = cox_partial_loglik(gamma, time, event, u)
    h = 1e-6
    for k in range(2):
        step = np.zeros(2)
        step[k] = h
        up = cox_partial_loglik(gamma + step, time, event, u)
        down = cox_partial_loglik(gamma - step, time, event, u)
        assert grad[k] == pytest.approx((up[0] - down[0]) / (2 * h), abs=1e-6)
        np.testing.assert_allclose(hess[:, k], (up[1] - down[1]) / (2 * h), atol=1e-5)


def test_breslow_without_covariates_is_nelson_aalen():
    time = np.array([1.0, 2.0, 2.0, 3.0, 4.0, 5.0])
    r = np.array([0, 0, 1, 1, 0, 1])  # censoring events at 1, 2 and 4
    y = np.where(r == 1, 0.0, np.nan)
    d = Dataset(
        x=np.zeros((6, 1)),
        z=np.ones(6, dtype=int),
        outcome=CensoredOutcome(t_obs=time, r=r, horizon=10.0, y=y),
        n_arms=2,
    )
    fit = fit_cox_censoring(d, (), stratum=1)
    np.testing.assert_allclose(fit.jump_times, [1.0, 2.0, 4.0])
    np.testing.assert_allclose(fit.increments, [1 / 6, 1 / 5, 1 / 2])
    assert baseline_cumulative_hazard(fit, 0.5) == 0.0
    assert baseline_cumulative_hazard(fit, 2.0) == pytest.approx(1 / 6 + 1 / 5)
    surv = censoring_survival(fit, np.array([3.0]), np.zeros((1, 0)))
    assert surv[0] == pytest.approx(np.exp(-(1 / 6 + 1 / 5)))


def test_arm_without_censoring_gets_a_zero_hazard(censored_dataset):
    d = censored_dataset
    r = np.ones(d.n, dtype=int)
    y = (d.outcome.t_obs < d.outcome.horizon).astype(float)
    full = Dataset(x=d.x, z=d.z, outcome=CensoredOutcome(t_obs=d.outcome.t_obs, r=r, horizon=d.outcome.horizon, y=y))
    fit = fit_cox_censoring(full, (0,), stratum=1)
    assert fit.n_events == 0
    np.testing.assert_allclose(censoring_survival(fit, np.array([0.5, 5.0]), np.zeros((2, 1))), 1.0)


def test_one_fit_per_arm_and_covariate_effect_sign(censored_dataset):
    fits = fit_censoring_models(censored_dataset, (1,))
    assert sorted(fits) == [1, 2, 3]
    for fit in fits.values():
        assert fit.columns == (1,)
        assert fit.n_events > 0
        assert np.isfinite(fit.gamma).all()


def test_ipcw_weights_floor_the_survival():
    fit = CoxFit(stratum=1, columns=(), gamma=np.zeros(0), jump_times=[0.1], increments=[10.0])
    other = CoxFit(stratum=2, columns=(), gamma=np.zeros(0), jump_times=[], increments=[])
    d = Dataset(
        x=np.zeros((4, 1)),
        z=np.array([1, 1, 2, 2]),
        outcome=CensoredOutcome(t_obs=np.array([0.05, 1.0, 1.0, 2.0]), r=np.ones(4, dtype=int), horizon=3.0, y=np.zeros(4)),
    )
    ps = PropensityMatrix(pi=np.full((4, 2), 0.5))
    w = ipcw_weights(ps, {1: fit, 2: other}, d)
    np.testing.assert_allclose(w.surv, [1.0, np.exp(-10.0), 1.0, 1.0])
    np.testing.assert_allclose(w.w_star, [2.0, 1 / (0.5 * SURVIVAL_FLOOR), 2.0, 2.0])


def test_binary_outcome_is_rejected(binary_dataset):
    with pytest.raises(DataValidationError):
        fit_cox_censoring(binary_dataset, (0,), stratum=1)
