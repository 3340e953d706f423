from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from opscore.core.exceptions import DataValidationError, EstimationError
from opscore.schemas.dataset import CensoredOutcome, Dataset
from opscore.schemas.estimate import EffectEstimate, PositivityReport, WeightVector
from opscore.schemas.fit import CoxFit, IpcwWeights
from opscore.schemas.propensity import PropensityMatrix
from opscore.survival.cox import ipcw_weights

Pair = tuple[int, int]


def all_pairs(n_arms: int) -> list[Pair]:
    """(j, j') for 1 <= j < j' <= J in lexicographic order."""
    return list(combinations(range(1, n_arms + 1), 2))


def weighted_arm_means(w: np.ndarray, z: np.ndarray, y: np.ndarray, arms: Sequence[int]) -> dict[int, float]:
    """Hajek mean sum(w I(Z=j) Y) / sum(w I(Z=j)) for every arm in `arms`; rows with w == 0 drop out."""
    means = {}
    for j in arms:
        in_arm = (z == j) & (w > 0)
        if not in_arm.any():
            raise EstimationError(f"arm {j} has no contributing subjects")
        means[j] = float(np.sum(w[in_arm] * y[in_arm]) / np.sum(w[in_arm]))
    return means


def _contrasts(means: Mapping[int, float], pairs: Sequence[Pair]) -> list[EffectEstimate]:
    return [EffectEstimate(pair=(j, k), tau_hat=means[k] - means[j]) for j, k in pairs]


def _arms(pairs: Sequence[Pair]) -> list[int]:
    return sorted({a for pair in pairs for a in pair})


class EffectService:
    """Naive, IPW and IPCW-IPW average treatment effects"""

    @staticmethod
    def ipw_ate(ps: PropensityMatrix, z: np.ndarray, y: np.ndarray, pairs: Sequence[Pair] | None = None) -> list[EffectEstimate]:
        """Hajek IPW contrasts with w_i = 1 / pi_{Z_i}(X_i)."""
        pairs = list(pairs) if pairs is not None else all_pairs(ps.J)
        z = np.asarray(z, dtype=np.int64)
        y = np.asarray(y, dtype=float)
        w = WeightVector(w=1.0 / ps.for_arms(z)).w
        return _contrasts(weighted_arm_means(w, z, y, _arms(pairs)), pairs)

    @staticmethod
    def ipcw_ipw_ate(
        w_star: IpcwWeights,
        z: np.ndarray,
        r: np.ndarray,
        y: np.ndarray,
        pairs: Sequence[Pair] | None = None,
    ) -> list[EffectEstimate]:
        """Hajek contrasts with weights w*_i R_i; only rows whose outcome was observed contribute."""
        z = np.asarray(z, dtype=np.int64)
        r = np.asarray(r, dtype=np.int64)
        pairs = list(pairs) if pairs is not None else all_pairs(int(z.max()))
        w = WeightVector(w=w_star.w_star, kind="ipcw").w * (r == 1)
        y_obs = np.where(r == 1, np.nan_to_num(np.asarray(y, dtype=float)), 0.0)
        for j in _arms(pairs):
            if not np.any((z == j) & (r == 1)):
                raise EstimationError(f"arm {j} has no subjects with an observed outcome")
        return _contrasts(weighted_arm_means(w, z, y_obs, _arms(pairs)), pairs)

    @staticmethod
    def naive_ate(
        z: np.ndarray,
        y: np.ndarray,
        r: np.ndarray | None = None,
        pairs: Sequence[Pair] | None = None,
    ) -> list[EffectEstimate]:
        """Unweighted arm-mean differences over the rows with an observed outcome."""
        z = np.asarray(z, dtype=np.int64)
        pairs = list(pairs) if pairs is not None else all_pairs(int(z.max()))
        observed = np.ones(z.shape[0], dtype=bool) if r is None else np.asarray(r) == 1
        y_obs = np.where(observed, np.nan_to_num(np.asarray(y, dtype=float)), 0.0)
        return _contrasts(weighted_arm_means(observed.astype(float), z, y_obs, _arms(pairs)), pairs)

    @staticmethod
    def estimate_ate(
        d: Dataset,
        ps: PropensityMatrix,
        cox_fits: Mapping[int, CoxFit] | None = None,
        pairs: Sequence[Pair] | None = None,
    ) -> list[EffectEstimate]:
        """IPW for binary outcomes, IPCW-IPW (with the given censoring fits) for censored ones."""
        pairs = list(pairs) if pairs is not None else all_pairs(d.J)
        if isinstance(d.outcome, CensoredOutcome):
            if cox_fits is None:
                raise DataValidationError(["censored outcomes need fitted censoring models"])
            w_star = ipcw_weights(ps, cox_fits, d)
            return EffectService.ipcw_ipw_ate(w_star, d.z, d.outcome.r, d.outcome.y, pairs)
        return EffectService.ipw_ate(ps, d.z, d.outcome.y, pairs)

    @staticmethod
    def naive_for(d: Dataset, pairs: Sequence[Pair] | None = None) -> list[EffectEstimate]:
        pairs = list(pairs) if pairs is not None else all_pairs(d.J)
        r = d.outcome.r if isinstance(d.outcome, CensoredOutcome) else None
        return EffectService.naive_ate(d.z, d.outcome.y, r, pairs)

    @staticmethod
    def positivity_report(ps: PropensityMatrix, eps: float = 0.01) -> PositivityReport:
        """Overlap diagnostics; the propensities are left untouched."""
        below = ps.pi < eps
        return PositivityReport(
            eps=eps,
            min_pi=[float(v) for v in ps.pi.min(axis=0)],
            count_below=[int(c) for c in below.sum(axis=0)],
            flagged_rows=int(below.any(axis=1).sum()),
            max_weight=float(1.0 / ps.pi.min()),
        )
