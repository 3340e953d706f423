"""
Data-generating processes for the three simulation settings and their ground-truth effects.

Covariate blocks are laid out as C (confounders), Z (treatment-only), Y (outcome-only) and
S (spurious), in that column order. Within a block the first floor(size / 2) columns are
Bernoulli(0.3) and the rest standard normal, except that the nonlinear setting keeps every
confounder continuous.
"""

from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.special import expit, logit, softmax

from opscore.core.logger import sim_logger as logger
from opscore.core.seeding import CALIBRATION_STREAM, stream
from opscore.schemas.dataset import BinaryOutcome, CensoredOutcome, CovariateRoles, Dataset
from opscore.schemas.propensity import PropensityMatrix
from opscore.schemas.scenario import ScenarioConfig, Setting, SimReplicate, Variant
from opscore.services.effect_service import all_pairs

BINARY_PROB = 0.3
CLAMP = 1e-3
TRUTH_CHUNK = 50_000


def _abs_clamped(v: np.ndarray) -> np.ndarray:
    return np.maximum(np.abs(v), CLAMP)


def _pairwise_products(cols: list[np.ndarray]) -> list[np.ndarray]:
    return [a * b for a, b in combinations(cols, 2)]


class SimulationService:
    """Scenario data generation and Monte Carlo truths"""

    @staticmethod
    def roles(cfg: ScenarioConfig) -> CovariateRoles:
        c, z, y = cfg.sizes
        return CovariateRoles(
            conf=tuple(range(0, c)),
            treat_only=tuple(range(c, c + z)),
            out_only=tuple(range(c + z, c + z + y)),
            spurious=tuple(range(c + z + y, cfg.p)),
        )

    @staticmethod
    def gen_covariates(cfg: ScenarioConfig, rng: np.random.Generator, n: int | None = None) -> tuple[np.ndarray, CovariateRoles]:
        n = n or cfg.n
        roles = SimulationService.roles(cfg)
        x = np.empty((n, cfg.p))
        blocks = (roles.conf, roles.treat_only, roles.out_only, roles.spurious)
        for b, block in enumerate(blocks):
            if not block:
                continue
            n_binary = 0 if (b == 0 and cfg.setting == Setting.NONLINEAR) else len(block) // 2
            cols = list(block)
            x[:, cols[:n_binary]] = rng.binomial(1, BINARY_PROB, size=(n, n_binary))
            x[:, cols[n_binary:]] = rng.standard_normal((n, len(cols) - n_binary))
        return x, roles

    @staticmethod
    def treatment_design(x: np.ndarray, roles: CovariateRoles, cfg: ScenarioConfig) -> np.ndarray:
        """Treatment-model covariates V without the intercept."""
        xc = x[:, list(roles.conf)]
        xz = x[:, list(roles.treat_only)]
        if cfg.setting != Setting.NONLINEAR:
            return np.hstack([xc, xz])

        c = [xc[:, k] for k in range(5)]
        z = [xz[:, k] for k in range(5)]
        linear = c + z
        nl_main = [
            c[0] * (c[0] > 0),
            np.exp(c[1]) ** -0.5,
            np.abs(c[2]),
            np.log(_abs_clamped(c[3] + 1)),
            _abs_clamped(c[4]) ** -0.5,
        ]
        z_nl = [z[0], z[1], z[2], z[3] ** 2, np.log(_abs_clamped(z[4]))]
        z_interactions = _pairwise_products(z) + [c[2] * z[0]]

        variant = cfg.variant
        if variant == Variant.L:
            cols = linear
        elif variant == Variant.NL:
            cols = nl_main + z_nl
        elif variant == Variant.LL:
            cols = linear + z_interactions
        elif variant == Variant.NLL:
            cols = nl_main + z_nl + z_interactions
        else:
            c_nlnl = [c[0] * (c[0] > 0), np.sqrt(np.exp(c[1])), np.abs(c[2]), np.log(_abs_clamped(c[3] + 1)), np.sqrt(np.abs(c[4]))]
            cols = c_nlnl + z_nl + _pairwise_products(c_nlnl) + [np.abs(c[2]) * z[0]]
        return np.column_stack(cols)

    @staticmethod
    def alpha_matrix(dim_v: int, n_arms: int, norm: float) -> np.ndarray:
        """
        J x (1 + dim_v) treatment coefficients: zero intercepts, the last arm at zero, odd
        arms (+1, -1, +1, ...), even arms 0.5 * (1, ..., 1); the whole matrix scaled to norm.
        """
        alpha = np.zeros((n_arms, 1 + dim_v))
        alternating = np.where(np.arange(dim_v) % 2 == 0, 1.0, -1.0)
        for j in range(n_arms - 1):
            alpha[j, 1:] = alternating if j % 2 == 0 else 0.5 * np.ones(dim_v)
        total = np.linalg.norm(alpha)
        if total == 0 or norm == 0:
            return np.zeros_like(alpha)
        return alpha * (norm / total)

    @staticmethod
    def beta_vectors(cfg: ScenarioConfig) -> np.ndarray:
        """J x |W| outcome coefficients, beta_j = c_j (1, ..., 1) with ||beta_j|| = beta_norms[j]."""
        k = cfg.sizes[0] + cfg.sizes[2]
        c = np.asarray(cfg.beta_norms, dtype=float) / np.sqrt(k)
        return np.outer(c, np.ones(k))

    @staticmethod
    def treatment_probabilities(x: np.ndarray, roles: CovariateRoles, cfg: ScenarioConfig) -> np.ndarray:
        v = SimulationService.treatment_design(x, roles, cfg)
        alpha = SimulationService.alpha_matrix(v.shape[1], cfg.n_arms, cfg.alpha_norm)
        return softmax(alpha[:, 0] + v @ alpha[:, 1:].T, axis=1)

    @staticmethod
    def true_propensity(x: np.ndarray, roles: CovariateRoles, cfg: ScenarioConfig) -> PropensityMatrix:
        return PropensityMatrix.from_probabilities(SimulationService.treatment_probabilities(x, roles, cfg))

    @staticmethod
    def gen_treatment(x: np.ndarray, roles: CovariateRoles, cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
        prob = SimulationService.treatment_probabilities(x, roles, cfg)
        u = rng.random(x.shape[0])
        z = 1 + np.sum(u[:, None] >= np.cumsum(prob, axis=1)[:, :-1], axis=1)
        return z.astype(np.int64)

    @staticmethod
    def _w_sum(x: np.ndarray, roles: CovariateRoles) -> np.ndarray:
        return x[:, list(roles.conf) + list(roles.out_only)].sum(axis=1)

    @staticmethod
    def outcome_probabilities(x: np.ndarray, roles: CovariateRoles, cfg: ScenarioConfig) -> np.ndarray:
        """n x J matrix of P(Y^(j) = 1 | X)."""
        w_sum = SimulationService._w_sum(x, roles)
        if cfg.setting == Setting.CENSORED:
            cen = cfg.censor
            mu = np.asarray(cen.arm_intercepts)[None, :] + cen.event_coef * w_sum[:, None]
            return expit((cen.horizon - mu) / cen.logistic_scale)
        c = np.asarray(cfg.beta_norms, dtype=float) / np.sqrt(cfg.sizes[0] + cfg.sizes[2])
        return expit(np.asarray(cfg.beta0)[None, :] + w_sum[:, None] * c[None, :])

    @staticmethod
    def gen_outcome_binary(
        x: np.ndarray, roles: CovariateRoles, z: np.ndarray, cfg: ScenarioConfig, rng: np.random.Generator
    ) -> tuple[BinaryOutcome, np.ndarray]:
        """Potential outcomes for every arm, then Y = Y^(Z); also returns the mean P(Y^(j) = 1 | X)."""
        prob = SimulationService.outcome_probabilities(x, roles, cfg)
        potential = rng.random(prob.shape) < prob
        y = potential[np.arange(x.shape[0]), np.asarray(z) - 1].astype(float)
        return BinaryOutcome(y=y), prob.mean(axis=0)

    @staticmethod
    def _censoring_risk(x: np.ndarray, roles: CovariateRoles, cfg: ScenarioConfig) -> np.ndarray:
        return np.exp(cfg.censor.gamma * x[:, list(roles.conf)].sum(axis=1))

    @staticmethod
    def _event_times(x: np.ndarray, roles: CovariateRoles, z: np.ndarray, cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
        cen = cfg.censor
        mu = np.asarray(cen.arm_intercepts)[np.asarray(z) - 1] + cen.event_coef * SimulationService._w_sum(x, roles)
        u = np.clip(rng.random(x.shape[0]), 1e-16, 1 - 1e-16)
        return np.maximum(mu + cen.logistic_scale * logit(u), 0.0)

    @staticmethod
    def weibull_scale(cfg: ScenarioConfig) -> float:
        """Censoring Weibull scale, recalibrated to the target censoring fraction when one is set."""
        if cfg.censor is None:
            raise ValueError("scenario has no censoring spec")
        if cfg.censor.target_rate is None:
            return cfg.censor.weibull_scale
        return _calibrated_scale(cfg.model_dump_json(exclude={"n", "seed", "name"}))

    @staticmethod
    def gen_censored(
        x: np.ndarray, roles: CovariateRoles, z: np.ndarray, cfg: ScenarioConfig, rng: np.random.Generator
    ) -> tuple[CensoredOutcome, np.ndarray]:
        """
        T ~ Logistic, C from the stratified Weibull-Cox model by inverse transform,
        R = I{C >= min(T, d)}, t_obs = min(T, C).
        """
        cen = cfg.censor
        t = SimulationService._event_times(x, roles, z, cfg, rng)
        e = -np.log1p(-rng.random(x.shape[0]))
        lam = SimulationService.weibull_scale(cfg)
        c = (e / (lam * SimulationService._censoring_risk(x, roles, cfg))) ** (1.0 / cen.weibull_shape)
        r = (c >= np.minimum(t, cen.horizon)).astype(np.int64)
        y = np.where(r == 1, (t < cen.horizon).astype(float), np.nan)
        outcome = CensoredOutcome(t_obs=np.minimum(t, c), r=r, horizon=cen.horizon, y=y)
        return outcome, SimulationService.outcome_probabilities(x, roles, cfg).mean(axis=0)

    @staticmethod
    def true_censoring_survival(x: np.ndarray, roles: CovariateRoles, t: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
        """S_C(t | U) = exp(-lambda t^nu exp(U'gamma)) under the scenario's censoring model."""
        lam = SimulationService.weibull_scale(cfg)
        t = np.asarray(t, dtype=float)
        return np.exp(-lam * t**cfg.censor.weibull_shape * SimulationService._censoring_risk(x, roles, cfg))

    @staticmethod
    def simulate(cfg: ScenarioConfig, rng: np.random.Generator) -> SimReplicate:
        x, roles = SimulationService.gen_covariates(cfg, rng)
        z = SimulationService.gen_treatment(x, roles, cfg, rng)
        if cfg.setting == Setting.CENSORED:
            outcome, means = SimulationService.gen_censored(x, roles, z, cfg, rng)
        else:
            outcome, means = SimulationService.gen_outcome_binary(x, roles, z, cfg, rng)
        d = Dataset(x=x, z=z, outcome=outcome, n_arms=cfg.n_arms, roles=roles)
        return SimReplicate(dataset=d, potential_means=means)

    @staticmethod
    def true_ate(cfg: ScenarioConfig, n_mc: int = 500_000, random_state=None) -> tuple[dict[tuple[int, int], float], np.ndarray]:
        """
        Arm means E{Y^(j)} averaged over n_mc covariate draws (conditional probabilities, not
        Bernoulli draws) and the pairwise differences tau(j, j') = E{Y^(j')} - E{Y^(j)}.
        """
        rng = random_state if isinstance(random_state, np.random.Generator) else np.random.default_rng(random_state)
        total = np.zeros(cfg.n_arms)
        done = 0
        while done < n_mc:
            size = min(TRUTH_CHUNK, n_mc - done)
            x, roles = SimulationService.gen_covariates(cfg, rng, n=size)
            total += SimulationService.outcome_probabilities(x, roles, cfg).sum(axis=0)
            done += size
        means = total / n_mc
        truth = {(j, k): float(means[k - 1] - means[j - 1]) for j, k in all_pairs(cfg.n_arms)}
        logger.info(f"Truth | {cfg.name} | n_mc={n_mc} | arm means={np.round(means, 4).tolist()}")
        return truth, means


@lru_cache(maxsize=32)
def _calibrated_scale(cfg_json: str) -> float:
    """
    Scale lambda at which the pilot's censoring fraction equals the target.

    A subject is censored iff lambda > E / (exp(U'gamma) min(T, d)^nu), so the target
    fraction is reached at the corresponding quantile of that threshold.
    """
    cfg = ScenarioConfig.model_validate_json(cfg_json)
    cen = cfg.censor
    rng = stream(CALIBRATION_STREAM)
    x, roles = SimulationService.gen_covariates(cfg, rng, n=cen.pilot_draws)
    z = SimulationService.gen_treatment(x, roles, cfg, rng)
    t = SimulationService._event_times(x, roles, z, cfg, rng)
    e = -np.log1p(-rng.random(x.shape[0]))
    m = np.maximum(np.minimum(t, cen.horizon), 1e-12)
    threshold = e / (SimulationService._censoring_risk(x, roles, cfg) * m**cen.weibull_shape)
    lam = float(np.quantile(threshold, cen.target_rate))
    logger.info(f"Censoring calibration | target={cen.target_rate:.3f} | weibull_scale={lam:.4g} (configured {cen.weibull_scale:.4g})")
    return lam
