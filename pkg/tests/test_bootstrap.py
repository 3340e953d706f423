import numpy as np
import pytest

from opscore.core.exceptions import BootstrapError
from opscore.schemas.dataset import BinaryOutcome, CensoredOutcome, Dataset
from opscore.schemas.estimate import EffectEstimate
from opscore.schemas.propensity import PropensityEstimate, PropensityMatrix
from opscore.schemas.routing import Method, MethodSpec, Route
from opscore.services.bootstrap_service import BootstrapService, needs_refit
from opscore.services.effect_service import EffectService
from opscore.services.propensity_service import PropensityService
from opscore.services.selection_service import SelectionService


def estimate(method: str, route: str) -> PropensityEstimate:
    return PropensityEstimate(ps=PropensityMatrix(pi=np.full((2, 2), 0.5)), route=route, method=method)


def test_normal_interval_uses_the_normal_quantile():
    lo, hi = BootstrapService.normal_ci(0.1, 0.02)
    assert hi - 0.1 == pytest.approx(1.959964 * 0.02, rel=1e-6)
    assert 0.1 - lo == pytest.approx(hi - 0.1)
    lo90, hi90 = BootstrapService.normal_ci(0.0, 1.0, level=0.9)
    assert hi90 == pytest.approx(1.644854, rel=1e-6)


def test_with_intervals_attaches_se_and_ci():
    est = [EffectEstimate(pair=(1, 2), tau_hat=0.3)]
    out = BootstrapService.with_intervals(est, {(1, 2): 0.1})
    assert out[0].se == 0.1
    assert out[0].ci == pytest.approx((0.3 - 0.1959964, 0.3 + 0.1959964), rel=1e-6)
    assert est[0].se is None


@pytest.mark.parametrize(
    "method, route, expected",
    [
        ("oal", "oal", True),
        ("logis", "all", False),
        ("logis", "op_all", False),
        ("logis", "ysel", True),
        ("logis", "op_yzsel", True),
        ("logis", "confounders", True),
        ("cart", "ysel", False),
        ("random_forest", "op_ysel", False),
    ],
)
def test_refit_rule(method, route, expected):
    assert needs_refit(estimate(method, route)) is expected


def test_constant_outcome_has_zero_standard_error():
    rng = np.random.default_rng(0)
    d = Dataset(x=rng.standard_normal((60, 2)), z=np.tile([1, 2, 3], 20), outcome=BinaryOutcome(y=np.ones(60)))
    boot = BootstrapService.modified_bootstrap(d, None, b=20, random_state=1, n_jobs=1)
    assert all(se == 0.0 for se in boot.se.values())
    assert boot.taus.shape == (20, 3)


def test_at_least_two_replicates(binary_dataset):
    with pytest.raises(ValueError):
        BootstrapService.modified_bootstrap(binary_dataset, None, b=1)


def test_arm_without_observed_outcomes_cannot_be_resampled():
    n = 30
    z = np.tile([1, 2, 3], 10)
    r = np.where(z == 3, 0, 1)
    y = np.where(r == 1, 0.0, np.nan)
    d = Dataset(
        x=np.random.default_rng(0).standard_normal((n, 2)),
        z=z,
        outcome=CensoredOutcome(t_obs=np.ones(n), r=r, horizon=5.0, y=y),
    )
    with pytest.raises(BootstrapError):
        BootstrapService.draw_rows(d, np.random.default_rng(0), max_redraws=5)


def test_results_do_not_depend_on_the_worker_count(binary_dataset):
    ps = PropensityMatrix(pi=np.full((binary_dataset.n, 3), 1 / 3))
    est = PropensityEstimate(ps=ps, route="all", method="cart")
    one = BootstrapService.modified_bootstrap(binary_dataset, est, b=12, random_state=5, n_jobs=1)
    many = BootstrapService.modified_bootstrap(binary_dataset, est, b=12, random_state=5, n_jobs=4)
    np.testing.assert_array_equal(one.taus, many.taus)


def test_reused_propensities_follow_their_rows(binary_dataset):
    d = binary_dataset
    rng = np.random.default_rng(3)
    pi = rng.dirichlet([2, 2, 2], size=d.n)
    ps = PropensityMatrix.from_probabilities(pi)
    est = PropensityEstimate(ps=ps, route="all", method="cart")
    boot = BootstrapService.modified_bootstrap(d, est, b=3, random_state=8, n_jobs=1)
    rows = BootstrapService.draw_rows(d, np.random.default_rng([8, 0]))
    first = EffectService.ipw_ate(ps.subset(rows), d.z[rows], d.outcome.y[rows])
    np.testing.assert_allclose(boot.taus[0], [e.tau_hat for e in first])


def test_modified_bootstrap_never_reruns_selection(binary_dataset, monkeypatch):
    d = binary_dataset
    pre, op = SelectionService.preselect(d, folds=5, random_state=2)
    method = MethodSpec(method=Method.LOGIS, folds=5)
    est = PropensityService.estimate_propensity(d, Route.OP_YSEL, method, pre, op, random_state=2)

    def forbidden(*args, **kwargs):
        raise AssertionError("selection must not run inside the modified bootstrap")

    monkeypatch.setattr(SelectionService, "preselect", staticmethod(forbidden))
    boot = BootstrapService.modified_bootstrap(d, est, method, b=5, random_state=3, n_jobs=1)
    assert all(np.isfinite(se) and se > 0 for se in boot.se.values())


def test_usual_bootstrap_reruns_the_pipeline(binary_dataset):
    seeds = []

    def pipeline(db, seed):
        seeds.append(seed)
        return EffectService.naive_for(db)

    boot = BootstrapService.usual_bootstrap(binary_dataset, pipeline, b=6, random_state=4, n_jobs=1)
    assert len(seeds) == 6 and len(set(seeds)) == 6
    assert set(boot.se) == {(1, 2), (1, 3), (2, 3)}
