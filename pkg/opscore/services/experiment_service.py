from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Callable, NamedTuple, Sequence

import numpy as np

from opscore.core.config import settings
from opscore.core.exceptions import ConfigurationError, OpscoreError
from opscore.core.logger import service_logger as logger
from opscore.core.seeding import BOOTSTRAP_STREAM, ESTIMATOR_STREAM, REPLICATE_STREAM, TRUTH_STREAM, derive_seed, stream
from opscore.schemas.dataset import CensoredOutcome, Dataset
from opscore.schemas.estimate import EffectEstimate
from opscore.schemas.experiment import (
    CensoringSummary,
    CiWidthRatio,
    EstimatorResult,
    ExperimentConfig,
    ExperimentResult,
    FailureRecord,
    PsCorrelation,
    SelectionGroup,
    SelectionReport,
    StudyResult,
    StudySchema,
)
from opscore.schemas.propensity import Preselection, PropensityMatrix
from opscore.schemas.routing import ORACLE_ROUTES, Method, MethodSpec, Route
from opscore.schemas.scenario import scenario_preset
from opscore.services.bootstrap_service import BootstrapService
from opscore.services.effect_service import EffectService, all_pairs
from opscore.services.ingestion_service import IngestedStudy
from opscore.services.metrics_service import MetricsService
from opscore.services.propensity_service import PropensityService
from opscore.services.selection_service import SelectionService
from opscore.services.simulation_service import SimulationService
from opscore.survival.cox import fit_censoring_models

NAIVE = "Naive"
ESTIMATION_ERRORS = (OpscoreError, np.linalg.LinAlgError, ValueError)


class DatasetRun(NamedTuple):
    results: list[EstimatorResult]
    failures: list[FailureRecord]
    preselection: Preselection | None
    propensities: dict[str, PropensityMatrix]


def estimator_label(route: Route | None, method: MethodSpec) -> str:
    if route is None:
        return method.method.label
    return f"{method.method.label} {route.label}"


def _planned(cfg: ExperimentConfig, d: Dataset) -> list[tuple[Route | None, MethodSpec]]:
    planned = cfg.route_method_pairs()
    if cfg.include_oracle and d.roles is not None:
        for method in cfg.methods:
            if method == Method.OAL:
                continue
            planned += [(route, cfg.method_spec(method)) for route in ORACLE_ROUTES if route not in cfg.routes]
    return planned


class ExperimentService:
    """Simulation experiments and real-data studies over every configured estimator"""

    @staticmethod
    def estimator_labels(cfg: ExperimentConfig, d: Dataset) -> list[str]:
        labels = [NAIVE] if cfg.include_naive else []
        return labels + [estimator_label(route, method) for route, method in _planned(cfg, d)]

    @staticmethod
    def _pipeline(
        route: Route | None,
        method: MethodSpec,
        cfg: ExperimentConfig,
        always_include: Sequence[int],
        censoring_columns: Sequence[int],
    ) -> Callable[[Dataset, int], list[EffectEstimate]]:
        """Selection, final model and estimator rerun from scratch; used by the usual bootstrap."""

        def run(db: Dataset, seed: int) -> list[EffectEstimate]:
            pre, op = SelectionService.preselect(db, always_include, cfg.folds, seed)
            est = PropensityService.estimate_propensity(db, route, method, pre, op, random_state=seed)
            cox = fit_censoring_models(db, censoring_columns) if db.is_censored else None
            return EffectService.estimate_ate(db, est.ps, cox)

        return run

    @staticmethod
    def _naive_pipeline(db: Dataset, seed: int) -> list[EffectEstimate]:
        return EffectService.naive_for(db)

    @staticmethod
    def estimate_dataset(
        d: Dataset,
        cfg: ExperimentConfig,
        seed: int,
        always_include: Sequence[int] = (),
        censoring_columns: Sequence[int] = (),
        replicate: int | None = None,
        n_jobs: int | None = None,
    ) -> DatasetRun:
        """
        Every configured estimator on one dataset: point estimates, bootstrap SEs and CIs,
        positivity diagnostics. Estimator failures are logged and recorded, never raised.
        """
        policy = cfg.bootstrap
        pairs = all_pairs(d.J)
        results: list[EstimatorResult] = []
        failures: list[FailureRecord] = []
        propensities: dict[str, PropensityMatrix] = {}
        planned = _planned(cfg, d)

        def fail(label: str, error: Exception):
            logger.warning(f"Estimator failed | {label} | replicate={replicate} | {type(error).__name__}: {error}")
            failures.append(FailureRecord(estimator=label, replicate=replicate, error_type=type(error).__name__, message=str(error)))

        cox_fits = None
        if d.is_censored:
            try:
                cox_fits = fit_censoring_models(d, censoring_columns)
            except ESTIMATION_ERRORS as e:
                for label in ExperimentService.estimator_labels(cfg, d):
                    if label != NAIVE:
                        fail(label, e)
                planned = []

        if cfg.include_naive:
            try:
                point = EffectService.naive_for(d, pairs)
                estimates, usual = point, None
                if policy.modified:
                    boot = BootstrapService.modified_bootstrap(
                        d, None, b=policy.b, random_state=derive_seed(seed, BOOTSTRAP_STREAM), pairs=pairs,
                        max_redraws=policy.max_redraws, n_jobs=n_jobs,
                    )
                    estimates = BootstrapService.with_intervals(point, boot.se, policy.level)
                if policy.usual:
                    boot = BootstrapService.usual_bootstrap(
                        d, ExperimentService._naive_pipeline, b=policy.b, random_state=derive_seed(seed, BOOTSTRAP_STREAM),
                        pairs=pairs, max_redraws=policy.max_redraws, n_jobs=n_jobs,
                    )
                    usual = BootstrapService.with_intervals(point, boot.se, policy.level)
                results.append(EstimatorResult(estimator=NAIVE, estimates=estimates, usual=usual))
            except ESTIMATION_ERRORS as e:
                fail(NAIVE, e)

        pre = op = None
        if planned:
            try:
                pre, op = SelectionService.preselect(d, always_include, cfg.folds, derive_seed(seed, ESTIMATOR_STREAM))
            except ESTIMATION_ERRORS as e:
                for route, method in planned:
                    fail(estimator_label(route, method), e)
                planned = []

        for k, (route, method) in enumerate(planned, start=1):
            label = estimator_label(route, method)
            try:
                est = PropensityService.estimate_propensity(
                    d, route, method, pre, op, random_state=derive_seed(seed, ESTIMATOR_STREAM, k)
                )
                point = EffectService.estimate_ate(d, est.ps, cox_fits, pairs)
                estimates, usual = point, None
                if policy.modified:
                    boot = BootstrapService.modified_bootstrap(
                        d,
                        est,
                        method,
                        b=policy.b,
                        random_state=derive_seed(seed, BOOTSTRAP_STREAM, k),
                        pairs=pairs,
                        censoring_columns=censoring_columns,
                        cox_fits=cox_fits,
                        refit_censoring=policy.refit_censoring,
                        max_redraws=policy.max_redraws,
                        n_jobs=n_jobs,
                    )
                    estimates = BootstrapService.with_intervals(point, boot.se, policy.level)
                if policy.usual:
                    boot = BootstrapService.usual_bootstrap(
                        d,
                        ExperimentService._pipeline(route, method, cfg, always_include, censoring_columns),
                        b=policy.b,
                        random_state=derive_seed(seed, BOOTSTRAP_STREAM, k),
                        pairs=pairs,
                        max_redraws=policy.max_redraws,
                        n_jobs=n_jobs,
                    )
                    usual = BootstrapService.with_intervals(point, boot.se, policy.level)
                results.append(
                    EstimatorResult(
                        estimator=label,
                        route=None if route is None else route.value,
                        method=method.method.value,
                        estimates=estimates,
                        usual=usual,
                        positivity=EffectService.positivity_report(est.ps, cfg.positivity_eps),
                    )
                )
                propensities[label] = est.ps
            except ESTIMATION_ERRORS as e:
                fail(label, e)

        return DatasetRun(results=results, failures=failures, preselection=pre, propensities=propensities)

    @staticmethod
    def run_simulation_experiment(cfg: ExperimentConfig) -> ExperimentResult:
        """
        Truth by Monte Carlo, then n_sims replicates each estimated by every configured
        estimator, summarized per estimator and pair. Replicate r uses the streams
        (seed, replicate, r), so results do not depend on the worker count.
        """
        if cfg.scenario is None:
            raise ConfigurationError("simulation experiments need a scenario preset")
        overrides = {"n": cfg.n} if cfg.n is not None else {}
        scenario = scenario_preset(cfg.scenario, seed=cfg.seed, **overrides)
        truth, means = SimulationService.true_ate(scenario, cfg.n_mc_truth, stream(cfg.seed, TRUTH_STREAM))
        workers = max(1, settings.threads)
        inner_jobs = 1 if workers > 1 and cfg.n_sims > 1 else None
        logger.info(f"Simulation | {scenario.name} n={scenario.n} sims={cfg.n_sims} workers={workers}")

        def one(r: int) -> tuple[DatasetRun, float | None, list[str]]:
            d = SimulationService.simulate(scenario, stream(cfg.seed, REPLICATE_STREAM, r)).dataset
            run = ExperimentService.estimate_dataset(
                d,
                cfg,
                derive_seed(cfg.seed, REPLICATE_STREAM, r),
                censoring_columns=d.roles.conf,
                replicate=r,
                n_jobs=inner_jobs,
            )
            rate = float(np.mean(d.outcome.r == 0)) if isinstance(d.outcome, CensoredOutcome) else None
            return run, rate, ExperimentService.estimator_labels(cfg, d)

        if workers == 1 or cfg.n_sims == 1:
            runs = [one(r) for r in range(cfg.n_sims)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                runs = list(pool.map(one, range(cfg.n_sims)))

        labels = runs[0][2]
        failures = [f for run, _, _ in runs for f in run.failures]
        metrics, usual_metrics = [], []
        for label in labels:
            found = [res for run, _, _ in runs for res in run.results if res.estimator == label]
            n_failed = sum(1 for f in failures if f.estimator == label)
            if not found:
                logger.warning(f"Simulation | {label} failed in every replicate")
                continue
            metrics.append(MetricsService.aggregate_metrics(truth, [res.estimates for res in found], label, n_failed))
            if all(res.usual is not None for res in found):
                usual_metrics.append(MetricsService.aggregate_metrics(truth, [res.usual for res in found], label, n_failed))

        rates = [rate for _, rate, _ in runs if rate is not None]
        return ExperimentResult(
            scenario=scenario.name,
            n=scenario.n,
            n_sims=cfg.n_sims,
            seed=cfg.seed,
            truth={f"{j} vs {k}": tau for (j, k), tau in truth.items()},
            arm_means=[float(m) for m in means],
            metrics=metrics,
            usual_metrics=usual_metrics,
            censoring_rate=float(np.mean(rates)) if rates else None,
            failures=failures,
        )

    @staticmethod
    def selection_report(pre: Preselection | None, d: Dataset, schema: StudySchema | None = None) -> SelectionReport:
        names = d.names()
        if pre is None:
            return SelectionReport(ysel=[], zsel=[], yzsel=[])

        def pick(cols) -> list[str]:
            return [names[c] for c in cols]

        groups = []
        for group, entries in (schema.groups if schema is not None else {}).items():
            members = {k for k, name in enumerate(names) if any(name == e or name.startswith(e) for e in entries)}
            groups.append(
                SelectionGroup(
                    group=group,
                    n_columns=len(members),
                    ysel=pick(c for c in pre.ysel if c in members),
                    zsel=pick(c for c in pre.zsel if c in members),
                    yzsel=pick(c for c in pre.yzsel if c in members),
                )
            )
        return SelectionReport(ysel=pick(pre.ysel), zsel=pick(pre.zsel), yzsel=pick(pre.yzsel), groups=groups)

    @staticmethod
    def ci_width_ratios(results: Sequence[EstimatorResult]) -> list[CiWidthRatio]:
        """Width of each OP route's CI over its base route's, per method and pair."""
        by_key = {(res.method, res.route): res for res in results if res.route is not None}
        ratios = []
        for (method, route), res in by_key.items():
            r = Route(route)
            if not r.uses_op or (method, r.base.value) not in by_key:
                continue
            base = by_key[(method, r.base.value)]
            for op_est, base_est in zip(res.estimates, base.estimates):
                if op_est.ci is None or base_est.ci is None:
                    continue
                base_width = base_est.ci[1] - base_est.ci[0]
                if base_width <= 0:
                    continue
                ratios.append(
                    CiWidthRatio(
                        method=Method(method).label,
                        base_route=r.base.label,
                        op_route=r.label,
                        pair=op_est.pair,
                        ratio=(op_est.ci[1] - op_est.ci[0]) / base_width,
                    )
                )
        return ratios

    @staticmethod
    def ps_correlations(propensities: dict[str, PropensityMatrix]) -> list[PsCorrelation]:
        out = []
        labels = list(propensities)
        if not labels:
            return out
        for j in range(propensities[labels[0]].J):
            for a, b in combinations(labels, 2):
                pa, pb = propensities[a].pi[:, j], propensities[b].pi[:, j]
                if np.std(pa) == 0 or np.std(pb) == 0:
                    continue
                out.append(PsCorrelation(arm=j + 1, first=a, second=b, correlation=float(np.corrcoef(pa, pb)[0, 1])))
        return out

    @staticmethod
    def run_study(study: IngestedStudy, schema: StudySchema, cfg: ExperimentConfig) -> StudyResult:
        """Every route x method on an ingested study, with selection and diagnostic reports."""
        d = study.dataset
        censoring_columns = study.censoring_columns or study.always_include
        logger.info(f"Study | n={d.n} p={d.p} J={d.J} estimators={len(ExperimentService.estimator_labels(cfg, d))}")
        run = ExperimentService.estimate_dataset(
            d, cfg, derive_seed(cfg.seed, ESTIMATOR_STREAM), study.always_include, censoring_columns
        )
        censoring = None
        if isinstance(d.outcome, CensoredOutcome):
            unobserved = d.outcome.r == 0
            censoring = CensoringSummary(
                overall=float(unobserved.mean()),
                per_arm=[float(unobserved[d.z == j].mean()) for j in range(1, d.J + 1)],
            )
        return StudyResult(
            arms=list(study.arm_labels),
            results=run.results,
            selection=ExperimentService.selection_report(run.preselection, d, schema),
            ci_width_ratios=ExperimentService.ci_width_ratios(run.results),
            ps_correlations=ExperimentService.ps_correlations(run.propensities),
            censoring=censoring,
            failures=run.failures,
        )
