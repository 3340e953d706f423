"""
Shared machinery for the penalized and unpenalized regression fitters.

Penalized fits work on an internally standardized design (mean 0, SD 1 per column,
population SD); coefficients are mapped back to the original scale before they leave
the module.
"""

from typing import Callable, NamedTuple

import numpy as np

from opscore.core.exceptions import RankDeficiencyError
from opscore.core.logger import glm_logger as logger

# Coordinate descent stops once the largest coefficient change drops below COEF_TOL.
# Tighter than 1e-7 so the reported KKT residuals stay under 1e-6.
COEF_TOL = 1e-8
MAX_SWEEPS = 10_000
MAX_OUTER = 100
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 100
N_LAMBDA = 100
# |linear predictor| beyond this means fitted probabilities within ~1e-13 of 0 or 1
SEPARATION_ETA = 30.0


class Standardized(NamedTuple):
    xs: np.ndarray
    center: np.ndarray
    scale: np.ndarray


def standardize(design: np.ndarray, intercept: bool = True) -> Standardized:
    """Center (when an intercept is fitted) and scale every column to unit population SD."""
    design = np.asarray(design, dtype=float)
    if design.shape[1] == 0:
        return Standardized(design.copy(), np.zeros(0), np.ones(0))
    center = design.mean(axis=0) if intercept else np.zeros(design.shape[1])
    scale = np.sqrt(((design - center) ** 2).mean(axis=0))
    scale[scale < 1e-12] = 1.0
    return Standardized((design - center) / scale, center, scale)


def unstandardize(b0: np.ndarray | float, beta: np.ndarray, std: Standardized):
    """
    Map standardized-scale coefficients back to the original columns.

    beta is (k,) for a binary model or (k, J) for a multinomial one.
    """
    coef = beta / (std.scale[:, None] if beta.ndim == 2 else std.scale)
    shift = std.center @ coef if coef.shape[0] else (np.zeros(coef.shape[1]) if coef.ndim == 2 else 0.0)
    return b0 - shift, coef


def soft_threshold(g: np.ndarray | float, t: float):
    # Inflate the threshold by a relative 1e-12 so that lambda == lambda_max lands exactly on zero
    t = t * (1.0 + 1e-12)
    return np.sign(g) * np.maximum(np.abs(g) - t, 0.0)


def lambda_grid(lambda_max: float, n: int, k: int, n_lambda: int = N_LAMBDA) -> np.ndarray:
    """Decreasing log-spaced grid from lambda_max to ratio * lambda_max."""
    ratio = 1e-4 if n > k else 1e-2
    if lambda_max <= 0:
        return np.zeros(1)
    return np.exp(np.linspace(np.log(lambda_max), np.log(lambda_max * ratio), n_lambda))


def penalty_factors(exempt: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    pf = np.where(exempt, 0.0, 1.0)
    if weights is not None:
        pf = np.where(exempt, 0.0, weights)
    return pf


def thresholds(lam: float, pf: np.ndarray) -> np.ndarray:
    """lam * pf with exempt columns at exactly 0 even when lam is infinite."""
    out = np.zeros_like(pf, dtype=float)
    penalized = pf > 0
    out[penalized] = lam * pf[penalized]
    return out


def collinear_columns(design: np.ndarray, tol: float = 1e-9) -> list[int]:
    """
    Greedy left-to-right rank scan: columns that add nothing to the span of the
    columns before them.
    """
    kept: list[int] = []
    dropped: list[int] = []
    for j in range(design.shape[1]):
        trial = design[:, kept + [j]]
        if np.linalg.matrix_rank(trial, tol=tol * max(1.0, np.abs(trial).max())) == len(kept) + 1:
            kept.append(j)
        else:
            dropped.append(j)
    return dropped


def check_full_rank(design: np.ndarray, intercept: bool = True) -> None:
    """Raise RankDeficiencyError naming collinear design columns (0-based, intercept excluded)."""
    n, k = design.shape
    full = np.hstack([np.ones((n, 1)), design]) if intercept else design
    if full.shape[1] > n:
        raise RankDeficiencyError(
            list(range(n - int(intercept), k)),
            f"{full.shape[1]} parameters for {n} rows; the design cannot be full rank",
        )
    dropped = collinear_columns(full)
    if dropped:
        columns = [j - 1 for j in dropped] if intercept else dropped
        logger.debug(f"Rank check failed | collinear columns: {columns}")
        raise RankDeficiencyError(columns)


class NewtonResult(NamedTuple):
    x: np.ndarray
    value: float
    grad_norm: float
    n_iter: int
    converged: bool


def newton_raphson(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    x0: np.ndarray,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> NewtonResult:
    """
    Maximize a concave objective. fun returns (value, gradient, hessian).

    Steps are halved until the objective does not decrease; convergence is declared
    when the gradient norm falls below tol.
    """
    x = np.asarray(x0, dtype=float).copy()
    value, grad, hess = fun(x)
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            return NewtonResult(x, value, gnorm, it - 1, True)
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            candidate = x + t * step
            new_value, new_grad, new_hess = fun(candidate)
            if np.isfinite(new_value) and new_value >= value - 1e-12 * max(1.0, abs(value)):
                break
            t *= 0.5
        else:
            return NewtonResult(x, value, gnorm, it, False)
        x, value, grad, hess = candidate, new_value, new_grad, new_hess
    gnorm = float(np.linalg.norm(grad))
    return NewtonResult(x, value, gnorm, max_iter, gnorm < tol)


def as_seed(random_state) -> int | None:
    """sklearn splitters want an int (or RandomState); draw one from a numpy Generator."""
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(2**31 - 1))
    return random_state


def cv_summary(fold_loss: np.ndarray, fold_sizes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fold-size weighted mean CV loss and its standard error, per lambda."""
    w = np.asarray(fold_sizes, dtype=float)
    cvm = w @ fold_loss / w.sum()
    n_folds = fold_loss.shape[0]
    var = w @ (fold_loss - cvm) ** 2 / w.sum()
    cvsd = np.sqrt(var / max(n_folds - 1, 1))
    return cvm, cvsd


def select_lambda(lambdas: np.ndarray, cvm: np.ndarray, cvsd: np.ndarray) -> tuple[int, int]:
    """
    Indices of the CV minimizer and of the largest lambda within one standard error of it.

    lambdas is decreasing, so the first index reaching the minimum is also the largest lambda
    among ties.
    """
    i_min = int(np.argmin(cvm))
    i_1se = int(np.flatnonzero(cvm <= cvm[i_min] + cvsd[i_min])[0])
    return i_min, i_1se
