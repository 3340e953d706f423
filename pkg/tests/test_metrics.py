import numpy as np
import pytest

from opscore.core.exceptions import EstimationError
from opscore.schemas.estimate import EffectEstimate
from opscore.services.metrics_service import MetricsService


def rep(tau, se=None, ci=None):
    return [EffectEstimate(pair=(1, 2), tau_hat=tau, se=se, ci=ci)]


def test_symmetric_errors():
    row = MetricsService.aggregate_metrics({(1, 2): 0.0}, [rep(-1.0), rep(1.0)], "X")
    m = row.pairs[0]
    assert m.bias == 0.0
    assert m.mc_sd == pytest.approx(np.sqrt(2))
    assert m.rmse == pytest.approx(1.0)
    assert m.mean_se is None and m.coverage_pct is None
    assert row.n_replicates == 2


def test_rmse_decomposes_into_bias_and_spread():
    rng = np.random.default_rng(0)
    taus = rng.normal(0.3, 0.1, size=50)
    row = MetricsService.aggregate_metrics({(1, 2): 0.25}, [rep(t) for t in taus])
    m = row.pairs[0]
    m_ = len(taus)
    assert m.rmse**2 == pytest.approx(m.bias**2 + m.mc_sd**2 * (m_ - 1) / m_)


def test_coverage_and_mean_se():
    reps = [rep(0.1, 0.05, (0.0, 0.2)), rep(0.5, 0.15, (0.4, 0.6))]
    m = MetricsService.aggregate_metrics({(1, 2): 0.15}, reps).pairs[0]
    assert m.mean_se == pytest.approx(0.1)
    assert m.coverage_pct == pytest.approx(50.0)


def test_single_replicate_has_no_mc_sd():
    m = MetricsService.aggregate_metrics({(1, 2): 0.0}, [rep(0.2)]).pairs[0]
    assert m.mc_sd is None
    assert m.rmse == pytest.approx(0.2)


def test_partial_standard_errors_are_not_averaged():
    m = MetricsService.aggregate_metrics({(1, 2): 0.0}, [rep(0.1, 0.1), rep(0.2)]).pairs[0]
    assert m.mean_se is None


def test_invalid_inputs():
    with pytest.raises(EstimationError):
        MetricsService.aggregate_metrics({(1, 2): 0.0}, [])
    with pytest.raises(EstimationError):
        MetricsService.aggregate_metrics({(1, 3): 0.0}, [rep(0.1)])
    mixed = [rep(0.1), [EffectEstimate(pair=(1, 3), tau_hat=0.0)]]
    with pytest.raises(EstimationError):
        MetricsService.aggregate_metrics({(1, 2): 0.0, (1, 3): 0.0}, mixed)
