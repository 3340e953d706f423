import numpy as np
import pytest

from opscore.core.exceptions import RankDeficiencyError, SeparationError
from opscore.glm.base import check_full_rank, collinear_columns
from opscore.glm.logistic import (
    cv_logistic_lasso,
    fit_logistic_lasso,
    fit_logistic_mle,
    logistic_kkt_residual,
    logistic_lambda_max,
    predict_binary,
)
from opscore.glm.multinomial import (
    cv_multinomial_group_lasso,
    fit_adaptive_group_lasso,
    fit_multinomial_group_lasso,
    fit_multinomial_mle,
    group_lambda_max,
    multinomial_kkt_residual,
    one_hot,
    predict_multinomial,
)
from opscore.schemas.dataset import BinaryOutcome, Dataset
from opscore.schemas.fit import AdaptiveWeights, DesignSpec
from tests.conftest import make_binary_dataset


KKT_TOL = 1e-6
N_RANDOM_INSTANCES = 50
LAMBDA_FRACTIONS = (0.05, 0.1, 0.2, 0.4, 0.7)


def full_spec(d: Dataset, exempt=None) -> DesignSpec:
    return DesignSpec(columns=tuple(range(d.p)), exempt=exempt)


def random_instance(seed: int) -> tuple[Dataset, float]:
    """Dataset of varying shape plus a fraction of lambda_max, both keyed by seed."""
    n = 80 + 20 * (seed % 7)
    p = 3 + seed % 6
    d = make_binary_dataset(n=n, p=p, n_arms=2 + seed % 3, seed=1000 + seed)
    return d, LAMBDA_FRACTIONS[seed % len(LAMBDA_FRACTIONS)]


def noise_dataset(seed: int, n: int = 200, p: int = 10, n_arms: int = 3) -> Dataset:
    """Treatment and outcome both independent of every covariate."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    z = rng.integers(1, n_arms + 1, size=n)
    y = rng.integers(0, 2, size=n).astype(float)
    return Dataset(x=x, z=z, outcome=BinaryOutcome(y=y), n_arms=n_arms)


class TestLogisticLasso:
    def test_kkt_conditions_hold(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        lam = 0.3 * logistic_lambda_max(d, d.outcome.y, spec)
        fit = fit_logistic_lasso(d, d.outcome.y, spec, lam)
        assert fit.support.size > 0
        assert logistic_kkt_residual(fit, d, d.outcome.y, spec) <= KKT_TOL

    @pytest.mark.parametrize("seed", range(N_RANDOM_INSTANCES))
    def test_kkt_conditions_hold_on_random_instances(self, seed):
        d, fraction = random_instance(seed)
        spec = full_spec(d)
        y = d.outcome.y
        fit = fit_logistic_lasso(d, y, spec, fraction * logistic_lambda_max(d, y, spec))
        assert logistic_kkt_residual(fit, d, y, spec) <= KKT_TOL

    @pytest.mark.slow
    def test_pure_noise_selects_at_most_one_covariate(self):
        small = 0
        for seed in range(100):
            d = noise_dataset(seed)
            fit = cv_logistic_lasso(d, d.outcome.y, full_spec(d), random_state=seed)
            small += fit.support.size <= 1
        assert small >= 90

    def test_lambda_max_zeroes_every_penalized_coefficient(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        lam = logistic_lambda_max(d, d.outcome.y, spec)
        fit = fit_logistic_lasso(d, d.outcome.y, spec, lam)
        assert np.all(fit.coef == 0)
        assert fit.theta[0] == pytest.approx(np.log(d.outcome.y.mean() / (1 - d.outcome.y.mean())), abs=1e-6)

    def test_exempt_column_survives_a_huge_penalty(self, binary_dataset):
        d = binary_dataset
        exempt = (True,) + (False,) * (d.p - 1)
        fit = fit_logistic_lasso(d, d.outcome.y, full_spec(d, exempt), 1e3)
        assert fit.coef[0] != 0
        assert np.all(fit.coef[1:] == 0)

    def test_zero_penalty_matches_maximum_likelihood(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        lasso = fit_logistic_lasso(d, d.outcome.y, spec, 0.0)
        mle = fit_logistic_mle(d, d.outcome.y, spec)
        np.testing.assert_allclose(lasso.theta, mle.theta, atol=1e-4)

    def test_cv_one_se_picks_a_larger_lambda_than_min(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        fit = cv_logistic_lasso(d, d.outcome.y, spec, folds=5, random_state=3)
        table = fit.cv_table
        assert table.criterion == "one_se"
        assert fit.lambda_ == table.lambda_1se
        assert table.lambda_1se >= table.lambda_min
        assert np.all(np.diff(table.lambdas) < 0)

    def test_cv_is_deterministic_for_a_seed(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        a = cv_logistic_lasso(d, d.outcome.y, spec, folds=5, random_state=11)
        b = cv_logistic_lasso(d, d.outcome.y, spec, folds=5, random_state=11)
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_predictions_are_clipped(self, binary_dataset):
        d = binary_dataset
        fit = fit_logistic_mle(d, d.outcome.y, full_spec(d))
        prob = predict_binary(fit, 1e6 * np.ones((2, d.p)))
        assert np.all(prob <= 1 - 1e-6) and np.all(prob >= 1e-6)


class TestLogisticMle:
    def test_separable_outcome_raises(self):
        x = np.linspace(-1, 1, 40).reshape(-1, 1)
        y = (x[:, 0] > 0).astype(float)
        d = Dataset(x=x, z=np.tile([1, 2], 20), outcome=BinaryOutcome(y=y))
        with pytest.raises(SeparationError):
            fit_logistic_mle(d, y, DesignSpec(columns=(0,)))

    def test_non_strict_separation_keeps_the_last_iterate(self):
        x = np.linspace(-1, 1, 40).reshape(-1, 1)
        y = (x[:, 0] > 0).astype(float)
        d = Dataset(x=x, z=np.tile([1, 2], 20), outcome=BinaryOutcome(y=y))
        fit = fit_logistic_mle(d, y, DesignSpec(columns=(0,)), strict=False)
        assert fit.coef[0] > 0

    def test_score_equations_are_zero(self, binary_dataset):
        d = binary_dataset
        fit = fit_logistic_mle(d, d.outcome.y, full_spec(d))
        resid = d.outcome.y - predict_binary(fit, d.x)
        assert abs(resid.mean()) < 1e-6
        np.testing.assert_allclose(d.x.T @ resid / d.n, 0.0, atol=1e-6)


class TestRank:
    def test_duplicate_column_is_reported(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal(20)
        design = np.column_stack([a, rng.standard_normal(20), a])
        assert collinear_columns(design) == [2]
        with pytest.raises(RankDeficiencyError) as err:
            check_full_rank(design)
        assert err.value.columns == [2]

    def test_more_parameters_than_rows(self):
        with pytest.raises(RankDeficiencyError):
            check_full_rank(np.random.default_rng(1).standard_normal((3, 5)))


class TestGroupLasso:
    def test_kkt_conditions_hold(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        lam = 0.3 * group_lambda_max(d, spec)
        fit = fit_multinomial_group_lasso(d, spec, lam)
        assert fit.support.size > 0
        assert multinomial_kkt_residual(fit, d, spec) <= KKT_TOL

    @pytest.mark.parametrize("seed", range(N_RANDOM_INSTANCES))
    def test_kkt_conditions_hold_on_random_instances(self, seed):
        d, fraction = random_instance(seed)
        spec = full_spec(d)
        fit = fit_multinomial_group_lasso(d, spec, fraction * group_lambda_max(d, spec))
        assert multinomial_kkt_residual(fit, d, spec) <= KKT_TOL

    @pytest.mark.slow
    def test_noise_only_design_selects_about_nothing(self):
        small = 0
        for seed in range(100):
            d = noise_dataset(seed)
            fit = cv_multinomial_group_lasso(d, full_spec(d), random_state=seed)
            small += fit.support.size <= 1
        assert small >= 90

    def test_symmetric_parameterization(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        fit = fit_multinomial_group_lasso(d, spec, 0.02)
        np.testing.assert_allclose(fit.psi.sum(axis=0), 0.0, atol=1e-10)

    def test_lambda_max_gives_the_empty_model(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        fit = fit_multinomial_group_lasso(d, spec, group_lambda_max(d, spec))
        assert fit.support.size == 0
        ps = predict_multinomial(fit, spec.build(d.x))
        freq = one_hot(d.z, d.J).mean(axis=0)
        np.testing.assert_allclose(ps.pi[0], freq, atol=1e-6)

    def test_two_arms_reduce_to_the_logistic_lasso(self):
        d = make_binary_dataset(n=250, p=5, n_arms=2, seed=4)
        spec = full_spec(d)
        lam = 0.2 * group_lambda_max(d, spec)
        group = fit_multinomial_group_lasso(d, spec, lam)
        y = (d.z == 2).astype(float)
        logistic = fit_logistic_lasso(d, y, spec, lam / np.sqrt(2))
        np.testing.assert_allclose(group.psi[1] - group.psi[0], logistic.theta, atol=1e-4)

    def test_zero_penalty_matches_maximum_likelihood_probabilities(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        group = fit_multinomial_group_lasso(d, spec, 0.0)
        mle = fit_multinomial_mle(d, spec)
        assert mle.parameterization == "reference"
        np.testing.assert_allclose(mle.psi[-1], 0.0)
        design = spec.build(d.x)
        np.testing.assert_allclose(predict_multinomial(group, design).pi, predict_multinomial(mle, design).pi, atol=1e-4)

    def test_infinite_adaptive_weight_drops_the_column(self, binary_dataset):
        d = binary_dataset
        spec = full_spec(d)
        w = np.ones(d.p)
        w[0] = np.inf
        fit = fit_adaptive_group_lasso(d, spec, AdaptiveWeights(w=w), 0.01)
        assert fit.group_norms[0] == 0
        assert fit.group_norms[1] > 0

    def test_cv_returns_the_min_lambda_when_asked(self, binary_dataset):
        d = binary_dataset
        fit = cv_multinomial_group_lasso(d, full_spec(d), folds=5, criterion="min", random_state=2)
        assert fit.lambda_ == fit.cv_table.lambda_min
        assert fit.penalized
