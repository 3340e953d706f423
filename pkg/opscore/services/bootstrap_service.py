"""
Bootstrap standard errors for effect estimates.

Replicate b draws its rows from np.random.default_rng([seed, b]); redraws (a resample
missing an arm) continue on the same stream, so SEs do not depend on the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.stats import norm

from opscore.core.config import settings
from opscore.core.exceptions import BootstrapError
from opscore.core.logger import service_logger as logger
from opscore.core.seeding import derive_seed
from opscore.schemas.dataset import CensoredOutcome, Dataset
from opscore.schemas.estimate import EffectEstimate
from opscore.schemas.fit import CoxFit, IpcwWeights
from opscore.schemas.propensity import PropensityEstimate
from opscore.schemas.routing import Method, MethodSpec, Route
from opscore.services.effect_service import EffectService, Pair, all_pairs
from opscore.services.propensity_service import PropensityService
from opscore.survival.cox import SURVIVAL_FLOOR, fit_censoring_models, ipcw_weights

Pipeline = Callable[[Dataset, int], Sequence[EffectEstimate]]


class BootstrapResult(NamedTuple):
    pairs: list[Pair]
    se: dict[Pair, float]
    taus: np.ndarray  # b x pairs


def needs_refit(estimate: PropensityEstimate) -> bool:
    """Logis on selection-based or oracle routes and OAL refit the final model; everything else reuses the PS."""
    if estimate.method == Method.OAL.value:
        return True
    if estimate.method != Method.LOGIS.value:
        return False
    return Route(estimate.route).base != Route.ALL


class BootstrapService:
    """Usual and modified bootstrap SEs, normal-approximation intervals"""

    @staticmethod
    def draw_rows(d: Dataset, rng: np.random.Generator, max_redraws: int = 50) -> np.ndarray:
        """n row indices with replacement; redrawn until every arm (with an observed outcome) is present."""
        observed = d.outcome.observed
        arms = np.arange(1, d.J + 1)
        for _ in range(max_redraws):
            rows = rng.integers(0, d.n, size=d.n)
            present = np.isin(arms, d.z[rows][observed[rows]])
            if present.all():
                return rows
        raise BootstrapError(f"no resample with every arm present after {max_redraws} draws")

    @staticmethod
    def _run(replicate: Callable[[int], np.ndarray], b: int, n_jobs: int | None) -> np.ndarray:
        workers = max(1, n_jobs or settings.threads)
        if workers == 1:
            return np.vstack([replicate(i) for i in range(b)])
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.vstack(list(pool.map(replicate, range(b))))

    @staticmethod
    def _summarize(pairs: list[Pair], taus: np.ndarray) -> BootstrapResult:
        sd = np.std(taus, axis=0, ddof=1)
        return BootstrapResult(pairs=pairs, se={pair: float(s) for pair, s in zip(pairs, sd)}, taus=taus)

    @staticmethod
    def modified_bootstrap(
        d: Dataset,
        estimate: PropensityEstimate | None,
        method: MethodSpec | None = None,
        b: int = 200,
        random_state: int = 0,
        pairs: Sequence[Pair] | None = None,
        censoring_columns: Sequence[int] = (),
        cox_fits: Mapping[int, CoxFit] | None = None,
        refit_censoring: bool = True,
        max_redraws: int = 50,
        n_jobs: int | None = None,
    ) -> BootstrapResult:
        """
        Resample rows jointly with their original fitted PS (and OP); refit only what the
        scheme requires: the final treatment model for fixed-selection Logis routes and OAL,
        and the censoring models when refit_censoring is set. Variable selection is never rerun.
        estimate=None bootstraps the naive estimator.
        """
        if b < 2:
            raise ValueError("the bootstrap needs at least two replicates")
        pairs = list(pairs) if pairs is not None else all_pairs(d.J)
        refit = estimate is not None and needs_refit(estimate)
        if refit and method is None:
            raise ValueError("refitting the final model needs its MethodSpec")
        censored = isinstance(d.outcome, CensoredOutcome)
        base_surv: IpcwWeights | None = None
        if censored and estimate is not None and not refit_censoring:
            if cox_fits is None:
                raise ValueError("reusing censoring survival needs the original censoring fits")
            base_surv = ipcw_weights(estimate.ps, cox_fits, d)

        def replicate(i: int) -> np.ndarray:
            rng = np.random.default_rng([random_state, i])
            rows = BootstrapService.draw_rows(d, rng, max_redraws)
            db = d.subset(rows)
            if estimate is None:
                est = EffectService.naive_for(db, pairs)
                return np.array([e.tau_hat for e in est])
            if refit:
                ps = PropensityService.refit_propensity(db, estimate, method, rows)
            else:
                ps = estimate.ps.subset(rows)
            if not censored:
                est = EffectService.ipw_ate(ps, db.z, db.outcome.y, pairs)
            elif refit_censoring:
                est = EffectService.estimate_ate(db, ps, fit_censoring_models(db, censoring_columns), pairs)
            else:
                pi_z = ps.for_arms(db.z)
                surv = base_surv.surv[rows]
                w = IpcwWeights(w_star=1.0 / (pi_z * np.maximum(surv, SURVIVAL_FLOOR)), pi_z=pi_z, surv=surv)
                est = EffectService.ipcw_ipw_ate(w, db.z, db.outcome.r, db.outcome.y, pairs)
            return np.array([e.tau_hat for e in est])

        taus = BootstrapService._run(replicate, b, n_jobs)
        label = "naive" if estimate is None else f"{estimate.method}/{estimate.route}"
        logger.debug(f"Modified bootstrap | {label} | b={b} refit={refit} censored={censored}")
        return BootstrapService._summarize(pairs, taus)

    @staticmethod
    def usual_bootstrap(
        d: Dataset,
        pipeline: Pipeline,
        b: int = 200,
        random_state: int = 0,
        pairs: Sequence[Pair] | None = None,
        max_redraws: int = 50,
        n_jobs: int | None = None,
    ) -> BootstrapResult:
        """Rerun the whole pipeline(resample, seed) on every replicate, selection included."""
        if b < 2:
            raise ValueError("the bootstrap needs at least two replicates")
        pairs = list(pairs) if pairs is not None else all_pairs(d.J)

        def replicate(i: int) -> np.ndarray:
            rng = np.random.default_rng([random_state, i])
            rows = BootstrapService.draw_rows(d, rng, max_redraws)
            est = {e.pair: e.tau_hat for e in pipeline(d.subset(rows), derive_seed(random_state, i))}
            return np.array([est[pair] for pair in pairs])

        taus = BootstrapService._run(replicate, b, n_jobs)
        logger.debug(f"Usual bootstrap | b={b}")
        return BootstrapService._summarize(pairs, taus)

    @staticmethod
    def normal_ci(tau_hat: float, se: float, level: float = 0.95) -> tuple[float, float]:
        q = float(norm.ppf((1.0 + level) / 2.0))
        return tau_hat - q * se, tau_hat + q * se

    @staticmethod
    def with_intervals(estimates: Sequence[EffectEstimate], se: Mapping[Pair, float], level: float = 0.95) -> list[EffectEstimate]:
        """Copies of estimates carrying their bootstrap SE and normal interval."""
        return [
            e.model_copy(update={"se": se[e.pair], "ci": BootstrapService.normal_ci(e.tau_hat, se[e.pair], level)})
            for e in estimates
        ]
