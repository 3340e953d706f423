"""
Binary logistic regression: LASSO by penalized IRLS with cyclic coordinate descent,
K-fold cross-validation over a lambda path, and Newton-Raphson maximum likelihood.
"""

from typing import NamedTuple

import numpy as np
from scipy.special import expit, logit
from sklearn.model_selection import KFold

from opscore.core.exceptions import ConvergenceError, SeparationError
from opscore.core.logger import glm_logger as logger
from opscore.glm.base import (
    COEF_TOL,
    MAX_OUTER,
    MAX_SWEEPS,
    SEPARATION_ETA,
    Standardized,
    as_seed,
    check_full_rank,
    cv_summary,
    lambda_grid,
    newton_raphson,
    penalty_factors,
    select_lambda,
    soft_threshold,
    standardize,
    thresholds,
    unstandardize,
)
from opscore.schemas.dataset import Dataset
from opscore.schemas.fit import CvTable, DesignSpec, LogisticFit
from opscore.schemas.propensity import PROB_CLIP

# glmnet-style early stop: the path ends once the fit explains 99.9% of the null deviance
DEV_RATIO_STOP = 0.999


class _Path(NamedTuple):
    lambdas: np.ndarray
    b0: np.ndarray
    beta: np.ndarray  # L x k, standardized scale
    n_iter: np.ndarray


def _prepare(d: Dataset, y: np.ndarray, spec: DesignSpec, penalty_weights: np.ndarray | None = None):
    design = spec.build(d.x)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != design.shape[0]:
        raise ValueError(f"outcome has {y.shape[0]} rows, design has {design.shape[0]}")
    pf = penalty_factors(spec.exempt_mask, penalty_weights)
    return design, y, pf


def _loss(eta: np.ndarray, y: np.ndarray) -> float:
    """Mean negative binomial log-likelihood."""
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def _fail(eta: np.ndarray, message: str):
    if np.max(np.abs(eta)) > SEPARATION_ETA:
        raise SeparationError(f"{message}; fitted probabilities reach 0 or 1 (separation)")
    raise ConvergenceError(message)


def _irls_cd(
    xs: np.ndarray,
    y: np.ndarray,
    thr: np.ndarray,
    b0: float,
    beta: np.ndarray,
    intercept: bool = True,
) -> tuple[float, np.ndarray, int]:
    """
    Minimize mean logistic loss + sum(thr * |beta|) on a standardized design.

    Outer loop: quadratic (IRLS) approximation with step halving on the objective.
    Inner loop: cyclic coordinate descent over the active set, then a KKT scan of
    the inactive columns.
    """
    n, k = xs.shape
    beta = beta.copy()
    sweeps = 0
    unpenalized = bool(np.all(thr == 0))
    eta = b0 + xs @ beta
    obj = _loss(eta, y) + float(np.sum(thr * np.abs(beta)))

    for outer in range(1, MAX_OUTER + 1):
        p = expit(eta)
        w = np.maximum(p * (1.0 - p), 1e-5)
        res = (y - p) / w
        xw = xs * w[:, None]
        xw2 = np.einsum("ij,ij->j", xw, xs) / n
        w_sum = w.sum()
        b0_old, beta_old = b0, beta.copy()

        active = (beta != 0) | (thr == 0)
        while True:
            for _ in range(MAX_SWEEPS):
                sweeps += 1
                max_delta = 0.0
                for j in np.flatnonzero(active):
                    if xw2[j] <= 0:
                        continue
                    bj = beta[j]
                    g = xw[:, j] @ res / n + xw2[j] * bj
                    new = float(soft_threshold(g, thr[j])) / xw2[j]
                    if new != bj:
                        res -= xs[:, j] * (new - bj)
                        beta[j] = new
                        max_delta = max(max_delta, abs(new - bj))
                if intercept:
                    d0 = float(w @ res) / w_sum
                    b0 += d0
                    res -= d0
                    max_delta = max(max_delta, abs(d0))
                if max_delta < COEF_TOL:
                    break
            if sweeps >= MAX_SWEEPS:
                _fail(b0 + xs @ beta, f"coordinate descent did not converge in {MAX_SWEEPS} sweeps")
            grad = xw.T @ res / n
            violators = ~active & (np.abs(grad) > thr * (1.0 + 1e-12))
            if not violators.any():
                break
            active |= violators

        new_eta = b0 + xs @ beta
        new_obj = _loss(new_eta, y) + float(np.sum(thr * np.abs(beta)))
        halvings = 0
        while new_obj > obj + 1e-12 * max(1.0, abs(obj)) and halvings < 30:
            b0 = 0.5 * (b0 + b0_old)
            beta = 0.5 * (beta + beta_old)
            new_eta = b0 + xs @ beta
            new_obj = _loss(new_eta, y) + float(np.sum(thr * np.abs(beta)))
            halvings += 1
        eta, obj = new_eta, new_obj

        change = max(abs(b0 - b0_old), float(np.max(np.abs(beta - beta_old), initial=0.0)))
        if change < COEF_TOL:
            return b0, beta, outer
        if unpenalized and np.max(np.abs(eta)) > 2 * SEPARATION_ETA:
            raise SeparationError("coefficients diverge: the covariates separate the outcome classes")

    _fail(eta, f"penalized IRLS did not converge in {MAX_OUTER} iterations")


def _null_fit(xs: np.ndarray, y: np.ndarray, pf: np.ndarray, intercept: bool) -> tuple[float, np.ndarray]:
    """Fit with every penalized coefficient held at zero (intercept and exempt columns free)."""
    ybar = float(np.clip(y.mean(), PROB_CLIP, 1 - PROB_CLIP))
    b0 = float(logit(ybar)) if intercept else 0.0
    beta = np.zeros(xs.shape[1])
    if np.any(pf == 0):
        b0, beta, _ = _irls_cd(xs, y, thresholds(np.inf, pf), b0, beta, intercept)
    return b0, beta


def _lambda_max(xs: np.ndarray, y: np.ndarray, pf: np.ndarray, intercept: bool) -> float:
    b0, beta = _null_fit(xs, y, pf, intercept)
    score = np.abs(xs.T @ (y - expit(b0 + xs @ beta))) / xs.shape[0]
    penalized = pf > 0
    if not penalized.any():
        return 0.0
    return float(np.max(score[penalized] / pf[penalized]))


def _path(
    xs: np.ndarray,
    y: np.ndarray,
    pf: np.ndarray,
    lambdas: np.ndarray,
    intercept: bool,
) -> _Path:
    """Warm-started fits down a decreasing lambda grid, truncated at separation or saturation."""
    b0, beta = _null_fit(xs, y, pf, intercept)
    null_dev = 2 * xs.shape[0] * _loss(np.full(xs.shape[0], logit(np.clip(y.mean(), PROB_CLIP, 1 - PROB_CLIP))), y)
    b0s, betas, iters = [], [], []
    for lam in lambdas:
        try:
            b0, beta, it = _irls_cd(xs, y, thresholds(lam, pf), b0, beta, intercept)
        except ConvergenceError as e:
            logger.warning(f"Lambda path truncated at lambda={lam:.3g} | {e}")
            break
        b0s.append(b0)
        betas.append(beta.copy())
        iters.append(it)
        dev = 2 * xs.shape[0] * _loss(b0 + xs @ beta, y)
        if null_dev > 0 and 1 - dev / null_dev > DEV_RATIO_STOP:
            logger.debug(f"Lambda path stopped at lambda={lam:.3g}; deviance ratio above {DEV_RATIO_STOP}")
            break
    if not b0s:
        raise SeparationError("no lambda on the path admits a finite fit")
    n_fit = len(b0s)
    return _Path(np.asarray(lambdas[:n_fit], dtype=float), np.asarray(b0s), np.vstack(betas), np.asarray(iters))


def _to_fit(b0: float, beta: np.ndarray, std: Standardized, lam: float | None, n_iter: int, intercept: bool, cv_table=None) -> LogisticFit:
    a, coef = unstandardize(b0, beta, std)
    if not intercept:
        a = 0.0
    return LogisticFit(
        theta=np.concatenate([[a], coef]),
        lambda_=lam,
        cv_table=cv_table,
        scale=std.scale,
        penalized=lam is not None,
        intercept=intercept,
        n_iter=n_iter,
    )


def _constant_outcome_fit(y: np.ndarray, k: int, scale: np.ndarray, lam: float | None, intercept: bool) -> LogisticFit:
    ybar = float(np.clip(y.mean(), PROB_CLIP, 1 - PROB_CLIP))
    logger.warning(f"Outcome has a single class (mean {y.mean():.3f}); returning the intercept-only fit")
    return LogisticFit(
        theta=np.concatenate([[logit(ybar) if intercept else 0.0], np.zeros(k)]),
        lambda_=lam,
        scale=scale,
        penalized=lam is not None,
        intercept=intercept,
    )


def logistic_lambda_max(d: Dataset, y: np.ndarray, spec: DesignSpec, penalty_weights: np.ndarray | None = None) -> float:
    """Smallest lambda at which every penalized coefficient is zero."""
    design, y, pf = _prepare(d, y, spec, penalty_weights)
    std = standardize(design, spec.intercept)
    return _lambda_max(std.xs, y, pf, spec.intercept)


def fit_logistic_lasso(
    d: Dataset,
    y: np.ndarray,
    spec: DesignSpec,
    lam: float,
    penalty_weights: np.ndarray | None = None,
) -> LogisticFit:
    """
    argmin  -(1/n) loglik(theta) + lam * sum_{k not exempt} w_k |theta_k|  on standardized columns.

    Raises SeparationError when lam == 0 and the outcome is separable.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    design, y, pf = _prepare(d, y, spec, penalty_weights)
    std = standardize(design, spec.intercept)
    if y.min() == y.max():
        return _constant_outcome_fit(y, design.shape[1], std.scale, lam, spec.intercept)
    ybar = float(np.clip(y.mean(), PROB_CLIP, 1 - PROB_CLIP))
    b0, beta, n_iter = _irls_cd(
        std.xs, y, thresholds(lam, pf), float(logit(ybar)) if spec.intercept else 0.0, np.zeros(design.shape[1]), spec.intercept
    )
    return _to_fit(b0, beta, std, lam, n_iter, spec.intercept)


def binomial_deviance(y: np.ndarray, prob: np.ndarray) -> float:
    """Mean binomial deviance with probabilities clipped to [1e-6, 1 - 1e-6]."""
    prob = np.clip(prob, PROB_CLIP, 1 - PROB_CLIP)
    return float(-2.0 * np.mean(y * np.log(prob) + (1 - y) * np.log1p(-prob)))


def cv_logistic_lasso(
    d: Dataset,
    y: np.ndarray,
    spec: DesignSpec,
    folds: int = 10,
    criterion: str = "one_se",
    random_state=None,
    penalty_weights: np.ndarray | None = None,
) -> LogisticFit:
    """K-fold CV over a 100-value lambda path; the returned fit is the full-data fit at the selected lambda."""
    if criterion not in ("min", "one_se"):
        raise ValueError(f"unknown criterion '{criterion}'")
    design, y, pf = _prepare(d, y, spec, penalty_weights)
    n, k = design.shape
    std = standardize(design, spec.intercept)
    if y.min() == y.max():
        return _constant_outcome_fit(y, k, std.scale, 0.0, spec.intercept)

    grid = lambda_grid(_lambda_max(std.xs, y, pf, spec.intercept), n, k)
    full = _path(std.xs, y, pf, grid, spec.intercept)
    n_lambda = len(full.lambdas)

    splitter = KFold(n_splits=min(folds, n), shuffle=True, random_state=as_seed(random_state))
    fold_loss = []
    fold_sizes = []
    for train, test in splitter.split(design):
        row = np.full(n_lambda, np.nan)
        y_train = y[train]
        tr_std = standardize(design[train], spec.intercept)
        if y_train.min() == y_train.max():
            ybar = float(np.clip(y_train.mean(), PROB_CLIP, 1 - PROB_CLIP))
            row[:] = binomial_deviance(y[test], np.full(test.shape[0], ybar))
        else:
            path = _path(tr_std.xs, y_train, pf, full.lambdas, spec.intercept)
            for l in range(len(path.lambdas)):
                a, coef = unstandardize(path.b0[l], path.beta[l], tr_std)
                row[l] = binomial_deviance(y[test], expit(a + design[test] @ coef))
        fold_loss.append(row)
        fold_sizes.append(test.shape[0])
    fold_loss = np.vstack(fold_loss)

    usable = ~np.isnan(fold_loss).any(axis=0)
    n_use = int(np.argmin(usable)) if not usable.all() else n_lambda
    if n_use == 0:
        raise SeparationError("every fold path separates at its first lambda")
    if n_use < n_lambda:
        logger.warning(f"CV restricted to the first {n_use} lambdas; some fold paths stopped early")

    cvm, cvsd = cv_summary(fold_loss[:, :n_use], np.asarray(fold_sizes))
    lambdas = full.lambdas[:n_use]
    i_min, i_1se = select_lambda(lambdas, cvm, cvsd)
    table = CvTable(
        lambdas=lambdas,
        cvm=cvm,
        cvsd=cvsd,
        nonzero=(full.beta[:n_use] != 0).sum(axis=1),
        lambda_min=float(lambdas[i_min]),
        lambda_1se=float(lambdas[i_1se]),
        criterion=criterion,
    )
    idx = i_min if criterion == "min" else i_1se
    logger.debug(f"Logistic CV | n={n} k={k} lambda_{criterion}={lambdas[idx]:.4g} nonzero={table.nonzero[idx]}")
    return _to_fit(full.b0[idx], full.beta[idx], std, float(lambdas[idx]), int(full.n_iter[idx]), spec.intercept, table)


def fit_logistic_mle(d: Dataset, y: np.ndarray, spec: DesignSpec, strict: bool = True) -> LogisticFit:
    """
    Unpenalized fit by Newton-Raphson (gradient norm < 1e-8, at most 100 iterations).

    strict=False turns separation into a warning and returns the last iterate.
    """
    design, y, _ = _prepare(d, y, spec)
    n, k = design.shape
    check_full_rank(design, spec.intercept)
    std = standardize(design, spec.intercept)
    if y.min() == y.max():
        return _constant_outcome_fit(y, k, std.scale, None, spec.intercept)
    full = np.hstack([np.ones((n, 1)), design]) if spec.intercept else design

    def loglik(theta: np.ndarray):
        eta = full @ theta
        p = expit(eta)
        value = -_loss(eta, y)
        grad = full.T @ (y - p) / n
        hess = -(full * (p * (1 - p))[:, None]).T @ full / n
        return value, grad, hess

    x0 = np.zeros(full.shape[1])
    if spec.intercept:
        x0[0] = logit(np.clip(y.mean(), PROB_CLIP, 1 - PROB_CLIP))
    result = newton_raphson(loglik, x0)
    eta = full @ result.x
    if not result.converged or np.max(np.abs(eta)) > SEPARATION_ETA:
        message = f"logistic MLE did not converge (gradient norm {result.grad_norm:.2e} after {result.n_iter} iterations)"
        if strict:
            _fail(eta, message)
        logger.warning(f"{message}; keeping the last iterate")
    theta = result.x if spec.intercept else np.concatenate([[0.0], result.x])
    return LogisticFit(theta=theta, scale=std.scale, penalized=False, intercept=spec.intercept, n_iter=result.n_iter)


def predict_binary(fit: LogisticFit, design: np.ndarray) -> np.ndarray:
    """P(Y=1 | design row), clipped to [1e-6, 1 - 1e-6]."""
    eta = fit.theta[0] + np.asarray(design, dtype=float) @ fit.coef
    return np.clip(expit(eta), PROB_CLIP, 1 - PROB_CLIP)


def logistic_kkt_residual(
    fit: LogisticFit,
    d: Dataset,
    y: np.ndarray,
    spec: DesignSpec,
    penalty_weights: np.ndarray | None = None,
) -> float:
    """Largest violation of the lasso optimality conditions, on the standardized scale."""
    design, y, pf = _prepare(d, y, spec, penalty_weights)
    std = standardize(design, spec.intercept)
    lam = fit.lambda_ or 0.0
    thr = thresholds(lam, pf)
    grad = std.xs.T @ (y - expit(fit.theta[0] + design @ fit.coef)) / design.shape[0]
    beta = fit.coef * std.scale
    nz = beta != 0
    viol = np.where(nz, np.abs(grad - thr * np.sign(beta)), np.maximum(np.abs(grad) - thr, 0.0))
    worst = float(viol.max(initial=0.0))
    if spec.intercept:
        worst = max(worst, abs(float(np.mean(y - expit(fit.theta[0] + design @ fit.coef)))))
    return worst
