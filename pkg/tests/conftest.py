import os

import numpy as np
import pytest
from scipy.special import expit, softmax

os.environ.setdefault("OPSCORE_LOG_LEVEL", "WARNING")

from opscore.schemas.dataset import BinaryOutcome, CensoredOutcome, Dataset  # noqa: E402


def make_binary_dataset(n: int = 300, p: int = 6, n_arms: int = 3, seed: int = 0) -> Dataset:
    """Columns 0-1 drive treatment and outcome, column 2 only the outcome, the rest are noise."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    eta = np.zeros((n, n_arms))
    eta[:, 0] = 0.8 * x[:, 0] - 0.5 * x[:, 1]
    if n_arms > 2:
        eta[:, 1] = 0.4 * x[:, 1]
    prob = softmax(eta, axis=1)
    z = 1 + (rng.random(n)[:, None] >= np.cumsum(prob, axis=1)[:, :-1]).sum(axis=1)
    y = (rng.random(n) < expit(-0.2 + 0.7 * x[:, 0] + 0.6 * x[:, 2] + 0.3 * (z == 2))).astype(float)
    return Dataset(x=x, z=z, outcome=BinaryOutcome(y=y), n_arms=n_arms)


def make_censored_dataset(n: int = 300, p: int = 4, n_arms: int = 3, seed: int = 1, horizon: float = 1.0) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    z = rng.integers(1, n_arms + 1, size=n)
    t = rng.exponential(1.0 / np.exp(0.3 * x[:, 0] + 0.2 * z))
    c = rng.exponential(2.0 * np.exp(-0.3 * x[:, 1]))
    r = (c >= np.minimum(t, horizon)).astype(int)
    y = np.where(r == 1, (t < horizon).astype(float), np.nan)
    outcome = CensoredOutcome(t_obs=np.minimum(t, c), r=r, horizon=horizon, y=y)
    return Dataset(x=x, z=z, outcome=outcome, n_arms=n_arms)


@pytest.fixture
def binary_dataset() -> Dataset:
    return make_binary_dataset()


@pytest.fixture
def censored_dataset() -> Dataset:
    return make_censored_dataset()
