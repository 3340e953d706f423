from itertools import combinations
from typing import Sequence

import numpy as np

from opscore.core.exceptions import ConfigurationError, ConvergenceError, EstimationError
from opscore.core.logger import propensity_logger as logger
from opscore.glm.base import collinear_columns
from opscore.glm.multinomial import fit_adaptive_group_lasso, fit_multinomial_mle, predict_multinomial
from opscore.propensity.base import ModelOutput
from opscore.propensity.factory import get_propensity_model
from opscore.schemas.dataset import BinaryOutcome, Dataset
from opscore.schemas.fit import AdaptiveWeights, DesignSpec, TwoStepFit
from opscore.schemas.propensity import OpVector, Preselection, PropensityEstimate, PropensityMatrix
from opscore.schemas.routing import Method, MethodSpec, Route

OAL_EXPONENTS = (-20.0, -15.0, -10.0, -5.0, -3.0, -1.0, -0.75, -0.5, -0.25, 0.25, 0.49)


def oal_lambda_grid(n: int) -> np.ndarray:
    """n^e for the eleven OAL exponents, largest first."""
    return np.sort(float(n) ** np.asarray(OAL_EXPONENTS))[::-1]


class PropensityService:
    """Route x method propensity estimation, the two-step OP model and the outcome-adaptive lasso"""

    @staticmethod
    def route_columns(route: Route, pre: Preselection, d: Dataset) -> tuple[int, ...]:
        base = route.base
        if base == Route.ALL:
            return tuple(range(d.p))
        if base == Route.YSEL:
            return pre.ysel
        if base == Route.YZSEL:
            return pre.yzsel
        if d.roles is None:
            raise ConfigurationError(f"Route {route.label} needs the simulation's covariate roles")
        if route == Route.CONFOUNDERS:
            return tuple(sorted(d.roles.conf))
        if route == Route.TREATMENT_PREDICTORS:
            return d.roles.confounders_and_treatment
        return d.roles.confounders_and_outcome

    @staticmethod
    def route_spec(route: Route, pre: Preselection, d: Dataset, op: OpVector | None = None) -> DesignSpec:
        """Design of the final model: the route's columns, plus an unpenalized p* column on OP routes."""
        columns = PropensityService.route_columns(route, pre, d)
        always = set(pre.always_include)
        exempt = [c in always for c in columns]
        if route.uses_op and op is not None:
            return DesignSpec(columns=columns, extra=op.p_star, extra_names=("p_star",), exempt=tuple(exempt + [True]))
        return DesignSpec(columns=columns, exempt=tuple(exempt))

    @staticmethod
    def estimate_propensity(
        d: Dataset,
        route: Route | None,
        method: MethodSpec,
        pre: Preselection,
        op: OpVector,
        random_state=None,
    ) -> PropensityEstimate:
        """
        Logis fits the route's columns (with p* on OP routes) directly. Tree methods on OP
        routes estimate the propensities on the base route's columns first and refine them
        with the two-step OP model. OAL ignores the route.
        """
        if method.method == Method.OAL:
            return PropensityService.oal_propensity(d, pre)
        if route is None:
            raise ConfigurationError(f"{method.method.label} needs a route")

        model = get_propensity_model(method, random_state)
        if method.method == Method.LOGIS:
            spec = PropensityService.route_spec(route, pre, d, op)
            out = model.fit_predict(d, spec)
            return PropensityEstimate(
                ps=out.ps,
                route=route.value,
                method=method.method.value,
                columns=spec.columns,
                uses_op=route.uses_op,
                penalized=out.penalized,
                lambda_=out.lambda_,
                design=spec,
            )

        spec = PropensityService.route_spec(route, pre, d)
        out = model.fit_predict(d, spec)
        if not route.uses_op:
            return PropensityEstimate(
                ps=out.ps, route=route.value, method=method.method.value, columns=spec.columns, design=spec
            )
        ps, _ = PropensityService.two_step_op_model(out.ps, op, d.z)
        return PropensityEstimate(
            ps=ps,
            route=route.value,
            method=method.method.value,
            columns=spec.columns,
            uses_op=True,
            first_stage=out.ps,
            design=spec,
        )

    @staticmethod
    def refit_propensity(d: Dataset, estimate: PropensityEstimate, method: MethodSpec, rows: np.ndarray) -> PropensityMatrix:
        """
        Final model refit on the resample d (= original rows `rows`) with the original columns;
        penalized fits keep their lambda and OP columns carry the original per-row p*.
        """
        if estimate.design is None:
            raise EstimationError(f"estimate {estimate.route}/{estimate.method} cannot be refit without its design")
        spec = estimate.design.subset_rows(rows)
        if method.method == Method.OAL:
            if not spec.columns:
                return PropensityMatrix.from_probabilities(np.full((d.n, d.J), 1.0 / d.J))
            fit = fit_adaptive_group_lasso(d, spec, AdaptiveWeights(w=estimate.adaptive_weights), estimate.lambda_)
            return predict_multinomial(fit, spec.build(d.x))
        model = get_propensity_model(method)
        previous = ModelOutput(estimate.ps, estimate.penalized, estimate.lambda_)
        return model.refit(d, spec, previous).ps

    @staticmethod
    def two_step_op_model(
        ps: PropensityMatrix,
        op: OpVector,
        z: np.ndarray,
    ) -> tuple[PropensityMatrix, TwoStepFit]:
        """
        Multinomial MLE of z on (1, pi_1, ..., pi_{J-1}, p*).

        PS columns that are collinear with the intercept and earlier columns are dropped with
        a warning. The regressors are the raw first-stage probabilities, so a refit whose OP
        coefficient ends at zero is still a recalibration of the first stage, not a copy of it.
        """
        J = ps.J
        n = ps.n
        design = np.column_stack([ps.pi[:, : J - 1], op.p_star])
        full = np.column_stack([np.ones(n), design])
        dropped = [j - 1 for j in collinear_columns(full) if j > 0]
        if dropped:
            names = [f"pi_{j + 1}" if j < J - 1 else "p_star" for j in dropped]
            logger.warning(f"Two-step OP model | dropping collinear columns {names}")
        keep = [j for j in range(design.shape[1]) if j not in dropped]

        ds = Dataset(x=design[:, keep], z=z, outcome=BinaryOutcome(y=np.zeros(n)), n_arms=J)
        spec = DesignSpec(columns=tuple(range(len(keep))))
        fit = fit_multinomial_mle(ds, spec, strict=False)

        coef = np.zeros((J - 1, design.shape[1]))
        coef[:, keep] = fit.psi[: J - 1, 1:]
        two_step = TwoStepFit(phi0=fit.psi[: J - 1, 0], eta=coef[:, : J - 1], phi=coef[:, J - 1], dropped=tuple(dropped))
        logger.debug(f"Two-step OP model | phi={np.round(two_step.phi, 4).tolist()}")
        return predict_multinomial(fit, design[:, keep]), two_step

    @staticmethod
    def wamd(ps: PropensityMatrix, d: Dataset, columns: Sequence[int], coefs: np.ndarray) -> float:
        """
        sum_k |theta_k| sum_{j<j'} |mu_k^(j) - mu_k^(j')| with mu_k^(j) the inverse-propensity
        weighted mean of column k in arm j.
        """
        columns = list(columns)
        coefs = np.abs(np.asarray(coefs, dtype=float))
        if len(columns) != coefs.shape[0]:
            raise ValueError(f"{coefs.shape[0]} coefficients for {len(columns)} columns")
        if not columns:
            return 0.0
        x = d.x[:, columns]
        w = 1.0 / ps.for_arms(d.z)
        means = []
        for j in range(1, ps.J + 1):
            in_arm = d.z == j
            if not in_arm.any():
                raise EstimationError(f"arm {j} has no subjects")
            means.append(np.average(x[in_arm], weights=w[in_arm], axis=0))
        gaps = sum(np.abs(means[a] - means[b]) for a, b in combinations(range(ps.J), 2))
        return float(gaps @ coefs)

    @staticmethod
    def oal_propensity(d: Dataset, pre: Preselection, n: int | None = None) -> PropensityEstimate:
        """
        Outcome-adaptive group lasso on the ysel columns with weights 1/|theta_k| (standardized
        scale); lambda_n runs over the OAL grid and the fit minimizing wAMD is kept, ties going
        to the largest lambda.
        """
        n = n or d.n
        columns = tuple(pre.ysel)
        if not columns:
            logger.warning("OAL | outcome model selected no covariates; returning uniform propensities")
            uniform = PropensityMatrix.from_probabilities(np.full((d.n, d.J), 1.0 / d.J))
            return PropensityEstimate(ps=uniform, route="oal", method=Method.OAL.value, design=DesignSpec())

        always = set(pre.always_include)
        exempt = tuple(c in always for c in columns)
        penalized = [c for c in columns if c not in always]
        weights = AdaptiveWeights(w=1.0 / np.abs(pre.outcome_standardized_coef[penalized]))
        spec = DesignSpec(columns=columns, exempt=exempt)
        design = spec.build(d.x)
        coefs = pre.outcome_coef[list(columns)]

        best = None
        for lam_n in oal_lambda_grid(n):
            lam = float(lam_n / n)
            try:
                fit = fit_adaptive_group_lasso(d, spec, weights, lam)
            except ConvergenceError as e:
                logger.warning(f"OAL | lambda_n={lam_n:.3g} skipped: {e}")
                continue
            ps = predict_multinomial(fit, design)
            score = PropensityService.wamd(ps, d, columns, coefs)
            logger.debug(f"OAL | lambda_n={lam_n:.3g} wAMD={score:.6g} active={fit.support.size}")
            # largest lambda first; ties keep the sparser fit
            if best is None or score < best[0] - 1e-12 * max(1.0, best[0]):
                best = (score, lam, ps)
        if best is None:
            raise EstimationError("OAL failed at every lambda in the grid")
        score, lam, ps = best
        logger.info(f"OAL | n={n} columns={len(columns)} lambda={lam:.4g} wAMD={score:.6g}")
        return PropensityEstimate(
            ps=ps,
            route="oal",
            method=Method.OAL.value,
            columns=columns,
            penalized=True,
            lambda_=lam,
            adaptive_weights=weights.w,
            design=spec,
        )
