"""
Multinomial logistic regression for treatment assignment.

Penalized fits use the symmetric (sum-to-zero) parameterization with one group per design
column, solved by block coordinate descent on a majorized quadratic: every observation gets
the scalar curvature max_j 2 p_ij (1 - p_ij), which dominates the local Hessian block by
Gershgorin, so each group update is a closed-form group soft-threshold.
Maximum likelihood fits use the reference-level parameterization (last arm pinned at 0).
"""

from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.model_selection import StratifiedKFold

from opscore.core.exceptions import ConvergenceError, DataValidationError, SeparationError
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
    standardize,
    thresholds,
    unstandardize,
)
from opscore.schemas.dataset import Dataset
from opscore.schemas.fit import AdaptiveWeights, CvTable, DesignSpec, MultinomialFit
from opscore.schemas.propensity import PROB_CLIP, PropensityMatrix, clip_probabilities

DEV_RATIO_STOP = 0.999


class _GroupPath(NamedTuple):
    lambdas: np.ndarray
    a0: np.ndarray  # L x J
    beta: np.ndarray  # L x k x J, standardized scale
    n_iter: np.ndarray


def one_hot(z: np.ndarray, n_arms: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.int64)
    Y = np.zeros((z.shape[0], n_arms))
    Y[np.arange(z.shape[0]), z - 1] = 1.0
    return Y


def _prepare(d: Dataset, spec: DesignSpec):
    design = spec.build(d.x)
    n_arms = d.J
    Y = one_hot(d.z, n_arms)
    missing = np.flatnonzero(Y.sum(axis=0) == 0)
    if missing.size:
        raise DataValidationError([f"treatment level {j + 1} has no rows" for j in missing])
    return design, Y


def _loss(eta: np.ndarray, Y: np.ndarray) -> float:
    return float(np.mean(logsumexp(eta, axis=1) - np.sum(Y * eta, axis=1)))


def _penalty(B: np.ndarray, thr: np.ndarray) -> float:
    return float(np.sum(thr * np.linalg.norm(B, axis=1)))


def _fail(eta: np.ndarray, message: str):
    spread = np.max(eta.max(axis=1) - eta.min(axis=1)) if eta.size else 0.0
    if spread > SEPARATION_ETA:
        raise SeparationError(f"{message}; fitted probabilities reach 0 or 1 (separation)")
    raise ConvergenceError(message)


def _null_intercepts(Y: np.ndarray) -> np.ndarray:
    freq = np.clip(Y.mean(axis=0), PROB_CLIP, 1.0)
    a0 = np.log(freq)
    return a0 - a0.mean()


def _group_bcd(
    xs: np.ndarray,
    Y: np.ndarray,
    thr: np.ndarray,
    a0: np.ndarray,
    B: np.ndarray,
    intercept: bool = True,
) -> tuple[np.ndarray, np.ndarray, int]:
    """
    Minimize mean multinomial NLL + sum_k thr_k ||B_k||_2 over symmetric coefficients.

    B is k x J (one row per design column). Outer loop re-expands the quadratic with step
    halving on the true objective; inner loop cycles over the active groups.
    """
    n, k = xs.shape
    a0 = a0.copy()
    B = B.copy()
    sweeps = 0
    unpenalized = bool(np.all(thr == 0))
    eta = a0 + xs @ B
    obj = _loss(eta, Y) + _penalty(B, thr)

    for outer in range(1, MAX_OUTER + 1):
        P = softmax(eta, axis=1)
        h = np.maximum(2.0 * np.max(P * (1.0 - P), axis=1), 1e-5)
        R = (Y - P) / h[:, None]
        xh = xs * h[:, None]
        c = np.einsum("ij,ij->j", xh, xs) / n
        h_sum = h.sum()
        a_old, B_old = a0.copy(), B.copy()

        active = (np.linalg.norm(B, axis=1) > 0) | (thr == 0)
        while True:
            for _ in range(MAX_SWEEPS):
                sweeps += 1
                max_delta = 0.0
                for j in np.flatnonzero(active):
                    if c[j] <= 0:
                        continue
                    g = xh[:, j] @ R / n + c[j] * B[j]
                    if thr[j] > 0:
                        gn = float(np.linalg.norm(g))
                        shrink = max(0.0, 1.0 - thr[j] * (1.0 + 1e-12) / gn) if gn > 0 else 0.0
                        new = g * (shrink / c[j])
                    else:
                        new = g / c[j]
                    delta = new - B[j]
                    if np.any(delta != 0):
                        R -= np.outer(xs[:, j], delta)
                        B[j] = new
                        max_delta = max(max_delta, float(np.max(np.abs(delta))))
                if intercept:
                    d0 = h @ R / h_sum
                    a0 += d0
                    R -= d0
                    max_delta = max(max_delta, float(np.max(np.abs(d0))))
                if max_delta < COEF_TOL:
                    break
            if sweeps >= MAX_SWEEPS:
                _fail(a0 + xs @ B, f"block coordinate descent did not converge in {MAX_SWEEPS} sweeps")
            grad = xh.T @ R / n
            violators = ~active & (np.linalg.norm(grad, axis=1) > thr * (1.0 + 1e-12))
            if not violators.any():
                break
            active |= violators

        new_eta = a0 + xs @ B
        new_obj = _loss(new_eta, Y) + _penalty(B, thr)
        halvings = 0
        while new_obj > obj + 1e-12 * max(1.0, abs(obj)) and halvings < 30:
            a0 = 0.5 * (a0 + a_old)
            B = 0.5 * (B + B_old)
            new_eta = a0 + xs @ B
            new_obj = _loss(new_eta, Y) + _penalty(B, thr)
            halvings += 1
        eta, obj = new_eta, new_obj

        change = max(float(np.max(np.abs(a0 - a_old))), float(np.max(np.abs(B - B_old), initial=0.0)))
        if change < COEF_TOL:
            return a0 - a0.mean(), B - B.mean(axis=1, keepdims=True), outer
        if unpenalized and np.max(eta.max(axis=1) - eta.min(axis=1)) > 2 * SEPARATION_ETA:
            raise SeparationError("coefficients diverge: the covariates separate the treatment arms")

    _fail(eta, f"group lasso did not converge in {MAX_OUTER} iterations")


def _null_fit(xs: np.ndarray, Y: np.ndarray, pf: np.ndarray, intercept: bool):
    a0 = _null_intercepts(Y) if intercept else np.zeros(Y.shape[1])
    B = np.zeros((xs.shape[1], Y.shape[1]))
    if np.any(pf == 0):
        a0, B, _ = _group_bcd(xs, Y, thresholds(np.inf, pf), a0, B, intercept)
    return a0, B


def _lambda_max(xs: np.ndarray, Y: np.ndarray, pf: np.ndarray, intercept: bool) -> float:
    a0, B = _null_fit(xs, Y, pf, intercept)
    grad = xs.T @ (Y - softmax(a0 + xs @ B, axis=1)) / xs.shape[0]
    norms = np.linalg.norm(grad, axis=1)
    penalized = pf > 0
    if not penalized.any():
        return 0.0
    return float(np.max(norms[penalized] / pf[penalized]))


def _path(xs: np.ndarray, Y: np.ndarray, pf: np.ndarray, lambdas: np.ndarray, intercept: bool) -> _GroupPath:
    a0, B = _null_fit(xs, Y, pf, intercept)
    null_dev = 2 * xs.shape[0] * _loss(np.tile(_null_intercepts(Y), (xs.shape[0], 1)), Y)
    a0s, betas, iters = [], [], []
    for lam in lambdas:
        try:
            a0, B, it = _group_bcd(xs, Y, thresholds(lam, pf), a0, B, intercept)
        except ConvergenceError as e:
            logger.warning(f"Group lasso path truncated at lambda={lam:.3g} | {e}")
            break
        a0s.append(a0.copy())
        betas.append(B.copy())
        iters.append(it)
        dev = 2 * xs.shape[0] * _loss(a0 + xs @ B, Y)
        if null_dev > 0 and 1 - dev / null_dev > DEV_RATIO_STOP:
            break
    if not a0s:
        raise SeparationError("no lambda on the path admits a finite fit")
    n_fit = len(a0s)
    return _GroupPath(np.asarray(lambdas[:n_fit], dtype=float), np.vstack(a0s), np.stack(betas), np.asarray(iters))


def _to_fit(
    a0: np.ndarray,
    B: np.ndarray,
    std: Standardized,
    lam: float | None,
    n_iter: int,
    cv_table: CvTable | None = None,
    weights: np.ndarray | None = None,
) -> MultinomialFit:
    intercepts, coef = unstandardize(a0, B, std)
    psi = np.column_stack([intercepts, coef.T]) if coef.size else intercepts.reshape(-1, 1)
    psi = psi - psi.mean(axis=0, keepdims=True)
    return MultinomialFit(
        psi=psi,
        parameterization="symmetric",
        lambda_=lam,
        cv_table=cv_table,
        scale=std.scale,
        weights=weights,
        penalized=lam is not None,
        n_iter=n_iter,
    )


def _adaptive_pf(spec: DesignSpec, weights: AdaptiveWeights | None) -> np.ndarray:
    exempt = spec.exempt_mask
    if weights is None:
        return penalty_factors(exempt)
    n_penalized = int((~exempt).sum())
    if weights.w.shape[0] != n_penalized:
        raise ValueError(f"{weights.w.shape[0]} adaptive weights for {n_penalized} penalized columns")
    full = np.zeros(exempt.shape[0])
    full[~exempt] = weights.w
    return penalty_factors(exempt, full)


def group_lambda_max(d: Dataset, spec: DesignSpec, weights: AdaptiveWeights | None = None) -> float:
    """Smallest lambda at which every penalized group is zero."""
    design, Y = _prepare(d, spec)
    pf = _adaptive_pf(spec, weights)
    keep = np.isfinite(pf)
    std = standardize(design[:, keep], spec.intercept)
    return _lambda_max(std.xs, Y, pf[keep], spec.intercept)


def _fit_weighted(d: Dataset, spec: DesignSpec, lam: float, weights: AdaptiveWeights | None) -> MultinomialFit:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    design, Y = _prepare(d, spec)
    pf = _adaptive_pf(spec, weights)
    keep = np.isfinite(pf)
    if not keep.all():
        logger.debug(f"Adaptive group lasso | dropping {int((~keep).sum())} columns with infinite weight")
    std = standardize(design[:, keep], spec.intercept)
    a0 = _null_intercepts(Y) if spec.intercept else np.zeros(Y.shape[1])
    B = np.zeros((int(keep.sum()), Y.shape[1]))
    a0, B, n_iter = _group_bcd(std.xs, Y, thresholds(lam, pf[keep]), a0, B, spec.intercept)
    B_full = np.zeros((design.shape[1], Y.shape[1]))
    B_full[keep] = B
    scale = np.ones(design.shape[1])
    scale[keep] = std.scale
    center = np.zeros(design.shape[1])
    center[keep] = std.center
    return _to_fit(
        a0,
        B_full,
        Standardized(np.empty((0, design.shape[1])), center, scale),
        lam,
        n_iter,
        weights=None if weights is None else weights.w,
    )


def fit_multinomial_group_lasso(d: Dataset, spec: DesignSpec, lam: float) -> MultinomialFit:
    """
    argmin  -(1/n) loglik(psi) + lam * sum_{k not exempt} ||psi_.k||_2  on standardized columns.

    For J = 2 this is the logistic lasso at lam / sqrt(2) with theta = psi_2 - psi_1.
    """
    return _fit_weighted(d, spec, lam, None)


def fit_adaptive_group_lasso(d: Dataset, spec: DesignSpec, weights: AdaptiveWeights, lam: float) -> MultinomialFit:
    """Group lasso with per-column penalty lam * w_k; columns with w_k = inf are dropped before fitting."""
    penalized = ~spec.exempt_mask
    if penalized.any() and not weights.finite.any() and not spec.exempt_mask.any():
        logger.warning("All adaptive weights are infinite; returning the intercept-only treatment model")
    return _fit_weighted(d, spec, lam, weights)


def multinomial_deviance(z: np.ndarray, prob: np.ndarray) -> float:
    """Mean multinomial deviance with probabilities clipped to [1e-6, 1 - 1e-6] and renormalized."""
    prob = clip_probabilities(prob)
    return float(-2.0 * np.mean(np.log(prob[np.arange(prob.shape[0]), np.asarray(z) - 1])))


def cv_multinomial_group_lasso(
    d: Dataset,
    spec: DesignSpec,
    folds: int = 10,
    criterion: str = "one_se",
    random_state=None,
    weights: AdaptiveWeights | None = None,
) -> MultinomialFit:
    """K-fold CV (folds stratified by treatment) over a 100-value lambda path."""
    if criterion not in ("min", "one_se"):
        raise ValueError(f"unknown criterion '{criterion}'")
    design, Y = _prepare(d, spec)
    pf = _adaptive_pf(spec, weights)
    keep = np.isfinite(pf)
    design_kept = design[:, keep]
    pf_kept = pf[keep]
    n, k = design_kept.shape
    std = standardize(design_kept, spec.intercept)

    grid = lambda_grid(_lambda_max(std.xs, Y, pf_kept, spec.intercept), n, k)
    full = _path(std.xs, Y, pf_kept, grid, spec.intercept)
    n_lambda = len(full.lambdas)

    splitter = StratifiedKFold(n_splits=min(folds, n), shuffle=True, random_state=as_seed(random_state))
    fold_loss = []
    fold_sizes = []
    for train, test in splitter.split(design_kept, d.z):
        row = np.full(n_lambda, np.nan)
        tr_std = standardize(design_kept[train], spec.intercept)
        try:
            path = _path(tr_std.xs, Y[train], pf_kept, full.lambdas, spec.intercept)
        except SeparationError:
            path = None
        if path is not None:
            for l in range(len(path.lambdas)):
                intercepts, coef = unstandardize(path.a0[l], path.beta[l], tr_std)
                prob = softmax(intercepts + design_kept[test] @ coef, axis=1)
                row[l] = multinomial_deviance(d.z[test], prob)
        fold_loss.append(row)
        fold_sizes.append(test.shape[0])
    fold_loss = np.vstack(fold_loss)

    usable = ~np.isnan(fold_loss).any(axis=0)
    n_use = int(np.argmin(usable)) if not usable.all() else n_lambda
    if n_use == 0:
        raise SeparationError("every fold path separates at its first lambda")
    if n_use < n_lambda:
        logger.warning(f"Group lasso CV restricted to the first {n_use} lambdas; some fold paths stopped early")

    cvm, cvsd = cv_summary(fold_loss[:, :n_use], np.asarray(fold_sizes))
    lambdas = full.lambdas[:n_use]
    i_min, i_1se = select_lambda(lambdas, cvm, cvsd)
    table = CvTable(
        lambdas=lambdas,
        cvm=cvm,
        cvsd=cvsd,
        nonzero=(np.linalg.norm(full.beta[:n_use], axis=2) > 0).sum(axis=1),
        lambda_min=float(lambdas[i_min]),
        lambda_1se=float(lambdas[i_1se]),
        criterion=criterion,
    )
    idx = i_min if criterion == "min" else i_1se
    logger.debug(f"Group lasso CV | n={n} k={k} lambda_{criterion}={lambdas[idx]:.4g} nonzero={table.nonzero[idx]}")

    B_full = np.zeros((design.shape[1], Y.shape[1]))
    B_full[keep] = full.beta[idx]
    scale = np.ones(design.shape[1])
    scale[keep] = std.scale
    center = np.zeros(design.shape[1])
    center[keep] = std.center
    return _to_fit(
        full.a0[idx],
        B_full,
        Standardized(np.empty((0, design.shape[1])), center, scale),
        float(lambdas[idx]),
        int(full.n_iter[idx]),
        cv_table=table,
        weights=None if weights is None else weights.w,
    )


def fit_multinomial_mle(d: Dataset, spec: DesignSpec, strict: bool = True) -> MultinomialFit:
    """
    Newton-Raphson maximum likelihood with arm J as the reference level.

    strict=False turns non-convergence into a warning and keeps the last iterate.
    """
    design, Y = _prepare(d, spec)
    n, k = design.shape
    J = Y.shape[1]
    check_full_rank(design, spec.intercept)
    full = np.hstack([np.ones((n, 1)), design]) if spec.intercept else design
    m = full.shape[1]
    eye = np.eye(J - 1)

    def loglik(flat: np.ndarray):
        theta = flat.reshape(J - 1, m)
        eta = np.column_stack([full @ theta.T, np.zeros(n)])
        P = softmax(eta, axis=1)
        value = -_loss(eta, Y)
        grad = (Y - P)[:, : J - 1].T @ full / n
        Pm = P[:, : J - 1]
        D = Pm[:, :, None] * (eye[None, :, :] - Pm[:, None, :])
        hess = -np.einsum("ijl,ia,ib->jalb", D, full, full, optimize=True) / n
        return value, grad.ravel(), hess.reshape((J - 1) * m, (J - 1) * m)

    x0 = np.zeros((J - 1, m))
    if spec.intercept:
        freq = np.clip(Y.mean(axis=0), PROB_CLIP, 1.0)
        x0[:, 0] = np.log(freq[: J - 1] / freq[J - 1])
    result = newton_raphson(loglik, x0.ravel())
    theta = result.x.reshape(J - 1, m)
    eta = np.column_stack([full @ theta.T, np.zeros(n)])
    spread = float(np.max(eta.max(axis=1) - eta.min(axis=1)))
    if not result.converged or spread > SEPARATION_ETA:
        message = f"multinomial MLE did not converge (gradient norm {result.grad_norm:.2e} after {result.n_iter} iterations)"
        if strict:
            _fail(eta, message)
        logger.warning(f"{message}; keeping the last iterate")
    psi = np.vstack([theta, np.zeros((1, m))])
    if not spec.intercept:
        psi = np.column_stack([np.zeros(J), psi])
    return MultinomialFit(psi=psi, parameterization="reference", penalized=False, n_iter=result.n_iter)


def predict_multinomial(fit: MultinomialFit, design: np.ndarray) -> PropensityMatrix:
    """Softmax of psi_0 + design @ psi_1:, clipped to [1e-6, 1 - 1e-6] and renormalized."""
    design = np.asarray(design, dtype=float)
    eta = fit.psi[:, 0] + design @ fit.psi[:, 1:].T
    return PropensityMatrix.from_probabilities(softmax(eta, axis=1))


def multinomial_kkt_residual(
    fit: MultinomialFit,
    d: Dataset,
    spec: DesignSpec,
    weights: AdaptiveWeights | None = None,
) -> float:
    """Largest violation of the group lasso optimality conditions, on the standardized scale."""
    design, Y = _prepare(d, spec)
    pf = _adaptive_pf(spec, weights)
    keep = np.isfinite(pf)
    std = standardize(design[:, keep], spec.intercept)
    lam = fit.lambda_ or 0.0
    thr = thresholds(lam, pf[keep])
    P = softmax(fit.psi[:, 0] + design @ fit.psi[:, 1:].T, axis=1)
    grad = std.xs.T @ (Y - P) / design.shape[0]
    B = fit.psi[:, 1:][:, keep].T * std.scale[:, None]
    norms = np.linalg.norm(B, axis=1)
    viol = np.zeros(B.shape[0])
    nz = norms > 0
    viol[nz] = np.linalg.norm(grad[nz] - thr[nz, None] * B[nz] / norms[nz, None], axis=1)
    viol[~nz] = np.maximum(np.linalg.norm(grad[~nz], axis=1) - thr[~nz], 0.0)
    worst = float(viol.max(initial=0.0))
    if spec.intercept:
        worst = max(worst, float(np.max(np.abs((Y - P).mean(axis=0)))))
    return worst
