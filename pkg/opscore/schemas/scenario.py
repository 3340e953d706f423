from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from opscore.core.exceptions import ConfigurationError
from opscore.schemas.base import ArrayModel, optional_frozen_array
from opscore.schemas.dataset import Dataset


class Setting(str, Enum):
    LINEAR = "linear"
    NONLINEAR = "nonlinear"
    CENSORED = "censored"


class Sparsity(str, Enum):
    SPARSE = "sparse"
    MODERATE = "moderate"
    DENSE = "dense"

    @property
    def block_size(self) -> int:
        return {Sparsity.SPARSE: 5, Sparsity.MODERATE: 10, Sparsity.DENSE: 20}[self]


class Variant(str, Enum):
    """Treatment-model design for the nonlinear setting."""

    L = "l"
    NL = "nl"
    LL = "l-l"
    NLL = "nl-l"
    NLNL = "nl-nl"


class CensoringSpec(BaseModel):
    """
    Logistic event times and Weibull-Cox censoring.

    T ~ Logistic(arm_intercepts[Z] + event_coef * sum(W), logistic_scale); Y = I(T < horizon);
    C = (-log u / (weibull_scale * exp(U'gamma)))^(1 / weibull_shape) with U = (1, X_C) and
    gamma = (0, gamma, ..., gamma). When target_rate is set, weibull_scale is recalibrated on
    pilot_draws draws so the unobserved fraction matches it.
    """

    gamma: float = 0.2
    weibull_scale: float = Field(default=0.01, gt=0)
    weibull_shape: float = Field(default=7.0, gt=0)
    logistic_scale: float = Field(default=6.0, gt=0)
    event_coef: float = 5.0
    horizon: float = Field(default=130.0, gt=0)
    arm_intercepts: tuple[float, ...] = (120.0, 100.0, 115.0)
    target_rate: float | None = Field(default=0.22, gt=0, lt=1)
    pilot_draws: int = Field(default=100_000, ge=1000)


class ScenarioConfig(BaseModel):
    name: str = "custom"
    setting: Setting = Setting.LINEAR
    sparsity: Sparsity = Sparsity.SPARSE
    variant: Variant | None = None
    n: int = Field(default=500, ge=2)
    p: int = Field(default=100, ge=1)
    # (|C|, |Z|, |Y|); the remaining p - sum columns are spurious
    sizes: tuple[int, int, int] = (5, 5, 5)
    n_arms: int = Field(default=3, ge=2)
    alpha_norm: float = Field(default=5.0, ge=0)
    beta_norms: tuple[float, ...] = (3.0, 2.0, 4.0)
    beta0: tuple[float, ...] = (0.0, 0.6, 0.4)
    censor: CensoringSpec | None = None
    seed: int | None = None

    @model_validator(mode="after")
    def _check(self):
        if any(s < 0 for s in self.sizes) or sum(self.sizes) > self.p:
            raise ValueError(f"role sizes {self.sizes} do not fit in p={self.p}")
        if len(self.beta_norms) != self.n_arms or len(self.beta0) != self.n_arms:
            raise ValueError("beta_norms and beta0 need one entry per arm")
        if self.setting == Setting.NONLINEAR:
            if self.variant is None:
                raise ValueError("the nonlinear setting needs a variant")
            if self.sizes[0] != 5 or self.sizes[1] != 5:
                raise ValueError("nonlinear designs are defined for |C| = |Z| = 5")
        if self.setting == Setting.CENSORED:
            if self.censor is None:
                raise ValueError("the censored setting needs a censoring spec")
            if len(self.censor.arm_intercepts) != self.n_arms:
                raise ValueError("censor.arm_intercepts needs one entry per arm")
        return self

    @property
    def n_spurious(self) -> int:
        return self.p - sum(self.sizes)


def _linear(sparsity: Sparsity) -> ScenarioConfig:
    k = sparsity.block_size
    return ScenarioConfig(name=f"linear-{sparsity.value}", sparsity=sparsity, sizes=(k, k, k))


def _nonlinear(variant: Variant) -> ScenarioConfig:
    return ScenarioConfig(name=variant.value, setting=Setting.NONLINEAR, variant=variant, beta0=(0.0, -0.6, 0.4))


PRESETS = {
    "linear-sparse": lambda: _linear(Sparsity.SPARSE),
    "linear-moderate": lambda: _linear(Sparsity.MODERATE),
    "linear-dense": lambda: _linear(Sparsity.DENSE),
    "l": lambda: _nonlinear(Variant.L),
    "nl": lambda: _nonlinear(Variant.NL),
    "l-l": lambda: _nonlinear(Variant.LL),
    "nl-l": lambda: _nonlinear(Variant.NLL),
    "nl-nl": lambda: _nonlinear(Variant.NLNL),
    "censored": lambda: ScenarioConfig(name="censored", setting=Setting.CENSORED, censor=CensoringSpec()),
}


def scenario_preset(name: str, **overrides) -> ScenarioConfig:
    """Named scenario with optional field overrides (e.g. n=1000)."""
    try:
        base = PRESETS[name.lower()]()
    except KeyError:
        raise ConfigurationError(f"Unknown scenario preset '{name}'. Available: {', '.join(PRESETS)}")
    if not overrides:
        return base
    return ScenarioConfig.model_validate({**base.model_dump(), **overrides})


class SimReplicate(ArrayModel):
    """One simulated dataset; potential_means holds the in-sample mean of P(Y^(j) = 1 | X) per arm."""

    dataset: Dataset
    potential_means: np.ndarray | None = None

    @field_validator("potential_means", mode="before")
    @classmethod
    def _coerce_means(cls, v):
        return optional_frozen_array(v, ndim=1)
