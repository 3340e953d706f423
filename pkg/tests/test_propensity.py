import numpy as np
import pytest
from scipy.special import expit, softmax

from opscore.core.exceptions import ConfigurationError
from opscore.glm.logistic import fit_logistic_mle, predict_binary
from opscore.propensity.factory import get_propensity_model
from opscore.schemas.dataset import BinaryOutcome, CovariateRoles, Dataset
from opscore.schemas.fit import DesignSpec, LogisticFit
from opscore.schemas.propensity import OpVector, Preselection, PropensityMatrix
from opscore.schemas.routing import Method, MethodSpec, Route
from opscore.services.propensity_service import OAL_EXPONENTS, PropensityService, oal_lambda_grid
from opscore.services.selection_service import SelectionService


def preselection(p: int, ysel, zsel, coef=None, always=()) -> Preselection:
    coef = np.zeros(p) if coef is None else np.asarray(coef, dtype=float)
    yzsel = tuple(sorted(set(ysel) & set(zsel)))
    return Preselection(
        ysel=tuple(ysel),
        zsel=tuple(zsel),
        yzsel=yzsel,
        always_include=tuple(always),
        outcome_fit=LogisticFit(theta=np.concatenate([[0.0], coef]), scale=np.ones(p)),
    )


@pytest.fixture
def selected(binary_dataset):
    return SelectionService.preselect(binary_dataset, folds=5, random_state=7)


class TestSelection:
    def test_nesting_and_op(self, binary_dataset, selected):
        pre, op = selected
        assert set(pre.yzsel) <= set(pre.ysel)
        assert set(pre.yzsel) <= set(pre.zsel)
        assert op.p_hat.shape == (binary_dataset.n,)
        np.testing.assert_allclose(op.p_star, np.log(op.p_hat / (1 - op.p_hat)))
        # column 0 drives both treatment and outcome
        assert 0 in pre.yzsel

    def test_always_include_is_forced_into_both_sets(self, binary_dataset):
        pre, _ = SelectionService.preselect(binary_dataset, always_include=(5,), folds=5, random_state=7)
        assert 5 in pre.ysel and 5 in pre.zsel and 5 in pre.yzsel
        assert pre.always_include == (5,)

    def test_censored_outcome_model_uses_observed_rows(self, censored_dataset):
        pre, op = SelectionService.preselect(censored_dataset, folds=5, random_state=1)
        assert op.p_hat.shape == (censored_dataset.n,)
        assert set(pre.yzsel) <= set(pre.ysel)


class TestRoutes:
    def test_route_columns(self, binary_dataset):
        d = binary_dataset
        pre = preselection(d.p, ysel=(0, 2), zsel=(0, 1))
        assert PropensityService.route_columns(Route.ALL, pre, d) == tuple(range(d.p))
        assert PropensityService.route_columns(Route.OP_YSEL, pre, d) == (0, 2)
        assert PropensityService.route_columns(Route.YZSEL, pre, d) == (0,)

    def test_op_route_appends_an_exempt_p_star_column(self, binary_dataset):
        d = binary_dataset
        pre = preselection(d.p, ysel=(0, 2), zsel=(0, 1), always=(2,))
        op = OpVector.from_probabilities(np.full(d.n, 0.4))
        spec = PropensityService.route_spec(Route.OP_YSEL, pre, d, op)
        assert spec.columns == (0, 2)
        assert spec.exempt == (False, True, True)
        assert spec.build(d.x).shape == (d.n, 3)

    def test_oracle_routes_need_roles(self, binary_dataset):
        d = binary_dataset
        pre = preselection(d.p, ysel=(0,), zsel=(0,))
        with pytest.raises(ConfigurationError):
            PropensityService.route_columns(Route.CONFOUNDERS, pre, d)
        roles = CovariateRoles(conf=(0,), treat_only=(1,), out_only=(2,), spurious=(3, 4, 5))
        d_roles = d.model_copy(update={"roles": roles})
        assert PropensityService.route_columns(Route.TREATMENT_PREDICTORS, pre, d_roles) == (0, 1)
        assert PropensityService.route_columns(Route.OUTCOME_PREDICTORS, pre, d_roles) == (0, 2)

    def test_oal_has_no_model_in_the_factory(self):
        with pytest.raises(ConfigurationError):
            get_propensity_model(MethodSpec(method=Method.OAL))


class TestEstimate:
    def test_logis_on_op_route(self, binary_dataset, selected):
        pre, op = selected
        est = PropensityService.estimate_propensity(
            binary_dataset, Route.OP_YSEL, MethodSpec(method=Method.LOGIS, folds=5), pre, op, random_state=1
        )
        assert est.uses_op and est.design.n_extra == 1
        np.testing.assert_allclose(est.ps.pi.sum(axis=1), 1.0)

    def test_tree_on_op_route_keeps_its_first_stage(self, binary_dataset, selected):
        pre, op = selected
        est = PropensityService.estimate_propensity(
            binary_dataset, Route.OP_ALL, MethodSpec(method=Method.CART), pre, op, random_state=1
        )
        assert est.first_stage is not None
        assert est.ps.pi.shape == est.first_stage.pi.shape

    def test_refit_on_the_identity_resample_reproduces_the_fit(self, binary_dataset, selected):
        d = binary_dataset
        pre, op = selected
        method = MethodSpec(method=Method.LOGIS, folds=5)
        est = PropensityService.estimate_propensity(d, Route.YSEL, method, pre, op, random_state=1)
        rows = np.arange(d.n)
        again = PropensityService.refit_propensity(d.subset(rows), est, method, rows)
        np.testing.assert_allclose(again.pi, est.ps.pi, atol=1e-6)


class TestTwoStep:
    @staticmethod
    def draw_arms(rng, prob: np.ndarray) -> np.ndarray:
        return 1 + (rng.random(prob.shape[0])[:, None] >= np.cumsum(prob, axis=1)[:, :-1]).sum(axis=1)

    def test_fitted_probabilities_average_to_arm_frequencies(self):
        rng = np.random.default_rng(3)
        n = 400
        x = rng.standard_normal((n, 2))
        first = softmax(np.column_stack([0.8 * x[:, 0], -0.5 * x[:, 1], np.zeros(n)]), axis=1)
        z = self.draw_arms(rng, first)
        op = OpVector.from_linear_predictor(0.7 * x[:, 0] + 0.3 * rng.standard_normal(n))
        out, fit = PropensityService.two_step_op_model(PropensityMatrix(pi=first), op, z)
        assert fit.dropped == ()
        # intercept score equations of the multinomial MLE
        freq = np.bincount(z, minlength=4)[1:] / n
        np.testing.assert_allclose(out.pi.mean(axis=0), freq, atol=1e-6)

    def test_first_stage_is_recalibrated_not_copied(self):
        rng = np.random.default_rng(4)
        n = 500
        x = rng.standard_normal(n)
        truth = softmax(np.column_stack([x, -x, np.zeros(n)]), axis=1)
        z = self.draw_arms(rng, truth)
        first = PropensityMatrix(pi=softmax(np.column_stack([2 * x, -2 * x, np.zeros(n)]), axis=1))
        constant_op = OpVector.from_linear_predictor(np.zeros(n))
        out, fit = PropensityService.two_step_op_model(first, constant_op, z)
        assert fit.dropped == (2,)
        np.testing.assert_array_equal(fit.phi, 0.0)
        assert np.max(np.abs(out.pi - first.pi)) > 0.05

    def test_two_arms_reduce_to_logistic_regression(self):
        rng = np.random.default_rng(5)
        n = 300
        pi_1 = np.clip(expit(rng.standard_normal(n)), 0.05, 0.95)
        p_star = rng.standard_normal(n)
        z = np.where(rng.random(n) < expit(-0.3 + 1.2 * pi_1 + 0.8 * p_star), 1, 2)
        out, fit = PropensityService.two_step_op_model(
            PropensityMatrix(pi=np.column_stack([pi_1, 1 - pi_1])), OpVector.from_linear_predictor(p_star), z
        )
        design = np.column_stack([pi_1, p_star])
        d = Dataset(x=design, z=z, outcome=BinaryOutcome(y=(z == 1).astype(float)))
        logistic = fit_logistic_mle(d, (z == 1).astype(float), DesignSpec(columns=(0, 1)))
        np.testing.assert_allclose(out.pi[:, 0], predict_binary(logistic, design), atol=1e-6)
        assert fit.phi[0] == pytest.approx(logistic.coef[1], abs=1e-6)

    def test_independent_treatment_gives_arm_frequencies(self):
        rng = np.random.default_rng(6)
        n = 3000
        z = rng.integers(1, 4, size=n)
        first = PropensityMatrix(pi=softmax(rng.standard_normal((n, 3)) * 0.3, axis=1))
        out, _ = PropensityService.two_step_op_model(first, OpVector.from_linear_predictor(rng.standard_normal(n)), z)
        freq = np.bincount(z, minlength=4)[1:] / n
        assert np.mean(np.abs(out.pi - freq)) < 0.02

    def test_constant_columns_are_dropped(self):
        rng = np.random.default_rng(0)
        n = 200
        ps = PropensityMatrix(pi=np.tile([0.2, 0.3, 0.5], (n, 1)))
        op = OpVector.from_probabilities(np.clip(rng.random(n), 0.05, 0.95))
        z = rng.integers(1, 4, size=n)
        out, fit = PropensityService.two_step_op_model(ps, op, z)
        assert fit.dropped == (0, 1)
        np.testing.assert_array_equal(fit.eta, 0.0)
        assert out.pi.shape == (n, 3)

    def test_op_enters_the_model(self):
        rng = np.random.default_rng(1)
        n = 600
        p_star = rng.standard_normal(n)
        eta = np.column_stack([1.5 * p_star, np.zeros(n), np.zeros(n)])
        prob = np.exp(eta) / np.exp(eta).sum(axis=1, keepdims=True)
        z = 1 + (rng.random(n)[:, None] >= np.cumsum(prob, axis=1)[:, :-1]).sum(axis=1)
        first = PropensityMatrix(pi=np.tile([0.3, 0.3, 0.4], (n, 1)))
        _, fit = PropensityService.two_step_op_model(first, OpVector.from_linear_predictor(p_star), z)
        # arm 3 is the reference level
        assert fit.phi[0] == pytest.approx(1.5, abs=0.4)
        assert abs(fit.phi[1]) < 0.5


class TestOal:
    def test_lambda_grid(self):
        grid = oal_lambda_grid(500)
        assert len(grid) == len(OAL_EXPONENTS) == 11
        assert np.all(np.diff(grid) < 0)
        assert grid[0] == pytest.approx(500**0.49)
        assert grid[-1] == pytest.approx(500.0**-20)

    def test_wamd_hand_example(self):
        x = np.array([[0.0], [2.0], [1.0], [3.0], [4.0], [4.0]])
        z = np.array([1, 1, 2, 2, 3, 3])
        d = Dataset(x=x, z=z, outcome=BinaryOutcome(y=np.zeros(6)))
        ps = PropensityMatrix(pi=np.full((6, 3), 1 / 3))
        # arm means 1, 2, 4: gaps 1 + 3 + 2
        assert PropensityService.wamd(ps, d, [0], np.array([-2.0])) == pytest.approx(12.0)

    def test_wamd_weights_by_inverse_propensity(self):
        x = np.array([[0.0], [2.0], [1.0], [1.0]])
        z = np.array([1, 1, 2, 2])
        d = Dataset(x=x, z=z, outcome=BinaryOutcome(y=np.zeros(4)))
        ps = PropensityMatrix(pi=np.array([[0.5, 0.5], [0.25, 0.75], [0.5, 0.5], [0.5, 0.5]]))
        # arm 1 mean (0 * 2 + 2 * 4) / 6
        assert PropensityService.wamd(ps, d, [0], np.array([1.0])) == pytest.approx(abs(8 / 6 - 1.0))

    def test_empty_outcome_support_gives_uniform_propensities(self, binary_dataset):
        pre = preselection(binary_dataset.p, ysel=(), zsel=(0,))
        est = PropensityService.oal_propensity(binary_dataset, pre)
        np.testing.assert_allclose(est.ps.pi, 1 / 3)

    def test_selected_lambda_comes_from_the_grid(self, binary_dataset):
        d = binary_dataset
        pre = preselection(d.p, ysel=(0, 2), zsel=(0, 1), coef=[0.7, 0, 0.6, 0, 0, 0])
        est = PropensityService.oal_propensity(d, pre)
        assert est.method == "oal"
        assert est.columns == (0, 2)
        assert any(est.lambda_ == pytest.approx(g / d.n) for g in oal_lambda_grid(d.n))
        np.testing.assert_allclose(est.adaptive_weights, [1 / 0.7, 1 / 0.6])

    def test_oal_refits_at_the_stored_lambda(self, binary_dataset):
        d = binary_dataset
        pre = preselection(d.p, ysel=(0, 2), zsel=(0, 1), coef=[0.7, 0, 0.6, 0, 0, 0])
        est = PropensityService.oal_propensity(d, pre)
        rows = np.arange(d.n)
        again = PropensityService.refit_propensity(d, est, MethodSpec(method=Method.OAL), rows)
        np.testing.assert_allclose(again.pi, est.ps.pi, atol=1e-8)
