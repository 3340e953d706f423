import numpy as np
import pytest

from opscore.core.exceptions import ConfigurationError
from opscore.schemas.scenario import PRESETS, ScenarioConfig, Setting, scenario_preset
from opscore.services.dataset_service import DatasetService
from opscore.services.simulation_service import SimulationService


class TestPresets:
    def test_every_preset_builds(self):
        for name in PRESETS:
            cfg = scenario_preset(name)
            assert cfg.n == 500 and cfg.p == 100 and cfg.n_arms == 3

    def test_overrides_and_unknown_names(self):
        assert scenario_preset("linear-dense", n=1000).n == 1000
        with pytest.raises(ConfigurationError):
            scenario_preset("no-such-scenario")

    def test_nonlinear_needs_a_variant(self):
        with pytest.raises(ValueError):
            ScenarioConfig(setting=Setting.NONLINEAR)


class TestCovariates:
    def test_role_blocks(self):
        cfg = scenario_preset("linear-moderate")
        roles = SimulationService.roles(cfg)
        assert roles.conf == tuple(range(10))
        assert roles.treat_only == tuple(range(10, 20))
        assert roles.out_only == tuple(range(20, 30))
        assert len(roles.spurious) == cfg.n_spurious == 70

    def test_first_half_of_each_block_is_binary(self):
        cfg = scenario_preset("linear-sparse", n=400)
        x, roles = SimulationService.gen_covariates(cfg, np.random.default_rng(0))
        for block in (roles.conf, roles.treat_only, roles.out_only):
            binary, normal = list(block[:2]), list(block[2:])
            assert np.all(np.isin(x[:, binary], (0.0, 1.0)))
            assert not np.any(np.isin(x[:, normal], (0.0, 1.0)))
        assert abs(x[:, 0].mean() - 0.3) < 0.08

    def test_nonlinear_confounders_are_continuous(self):
        cfg = scenario_preset("nl")
        x, roles = SimulationService.gen_covariates(cfg, np.random.default_rng(0), n=50)
        assert not np.any(np.isin(x[:, list(roles.conf)], (0.0, 1.0)))


class TestCoefficients:
    def test_outcome_coefficients(self):
        beta = SimulationService.beta_vectors(scenario_preset("linear-sparse"))
        assert beta.shape == (3, 10)
        assert beta[0, 0] == pytest.approx(3 / np.sqrt(10))
        np.testing.assert_allclose(np.linalg.norm(beta, axis=1), [3.0, 2.0, 4.0])

    def test_treatment_coefficients(self):
        alpha = SimulationService.alpha_matrix(10, 3, 5.0)
        assert alpha.shape == (3, 11)
        assert np.linalg.norm(alpha) == pytest.approx(5.0)
        np.testing.assert_array_equal(alpha[2], 0.0)
        np.testing.assert_array_equal(alpha[:, 0], 0.0)
        assert alpha[0, 1] > 0 > alpha[0, 2]
        assert np.all(alpha[1, 1:] == alpha[1, 1])

    @pytest.mark.parametrize("name, width", [("l", 10), ("nl", 10), ("l-l", 21), ("nl-l", 21), ("nl-nl", 21)])
    def test_nonlinear_design_widths(self, name, width):
        cfg = scenario_preset(name)
        x, roles = SimulationService.gen_covariates(cfg, np.random.default_rng(1), n=30)
        v = SimulationService.treatment_design(x, roles, cfg)
        assert v.shape == (30, width)
        assert np.all(np.isfinite(v))


class TestReplicates:
    def test_replicate_is_valid_and_reproducible(self):
        cfg = scenario_preset("linear-sparse", n=200)
        a = SimulationService.simulate(cfg, np.random.default_rng([1, 2, 3])).dataset
        b = SimulationService.simulate(cfg, np.random.default_rng([1, 2, 3])).dataset
        assert DatasetService.validate_dataset(a) == []
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.z, b.z)
        assert a.roles is not None

    def test_outcome_draw_does_not_read_treatment_probabilities(self):
        cfg = scenario_preset("linear-sparse", n=300)
        x, roles = SimulationService.gen_covariates(cfg, np.random.default_rng(0))
        z1 = np.ones(300, dtype=int)
        z2 = np.tile([1, 2, 3], 100)
        y1, m1 = SimulationService.gen_outcome_binary(x, roles, z1, cfg, np.random.default_rng(9))
        y2, m2 = SimulationService.gen_outcome_binary(x, roles, z2, cfg, np.random.default_rng(9))
        same = z1 == z2
        np.testing.assert_array_equal(y1.y[same], y2.y[same])
        np.testing.assert_allclose(m1, m2)

    def test_truth_is_the_difference_of_arm_means(self):
        cfg = scenario_preset("linear-sparse")
        truth, means = SimulationService.true_ate(cfg, n_mc=20_000, random_state=0)
        assert set(truth) == {(1, 2), (1, 3), (2, 3)}
        assert truth[(1, 3)] == pytest.approx(means[2] - means[0])
        assert np.all((means > 0) & (means < 1))

    def test_censoring_is_calibrated_to_the_target_rate(self):
        cfg = scenario_preset("censored", n=20_000)
        d = SimulationService.simulate(cfg, np.random.default_rng(4)).dataset
        assert DatasetService.validate_dataset(d) == []
        assert np.mean(d.outcome.r == 0) == pytest.approx(cfg.censor.target_rate, abs=0.02)

    def test_true_censoring_survival_is_decreasing_in_time(self):
        cfg = scenario_preset("censored", n=10)
        x, roles = SimulationService.gen_covariates(cfg, np.random.default_rng(0))
        early = SimulationService.true_censoring_survival(x, roles, np.full(10, 50.0), cfg)
        late = SimulationService.true_censoring_survival(x, roles, np.full(10, 120.0), cfg)
        assert np.all(late <= early)
