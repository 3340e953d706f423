import numpy as np
from pydantic import field_validator, model_validator
from scipy.special import expit, logit

from opscore.schemas.base import ArrayModel, frozen_array, optional_frozen_array
from opscore.schemas.fit import DesignSpec, LogisticFit, MultinomialFit

PROB_CLIP = 1e-6


def clip_probabilities(p: np.ndarray, eps: float = PROB_CLIP) -> np.ndarray:
    """Clip into [eps, 1-eps]; matrices are renormalized row-wise afterwards."""
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    if p.ndim == 2:
        p = p / p.sum(axis=1, keepdims=True)
    return p


class PropensityMatrix(ArrayModel):
    pi: np.ndarray

    @field_validator("pi", mode="before")
    @classmethod
    def _coerce_pi(cls, v):
        return frozen_array(v, ndim=2)

    @model_validator(mode="after")
    def _check_simplex(self):
        if self.pi.size and (np.any(self.pi <= 0) or np.any(self.pi >= 1)):
            raise ValueError("propensities must lie strictly inside (0, 1)")
        if self.pi.size and np.max(np.abs(self.pi.sum(axis=1) - 1.0)) > 1e-10:
            raise ValueError("propensity rows must sum to one")
        return self

    @classmethod
    def from_probabilities(cls, p: np.ndarray) -> "PropensityMatrix":
        return cls(pi=clip_probabilities(np.atleast_2d(p)))

    @property
    def n(self) -> int:
        return int(self.pi.shape[0])

    @property
    def J(self) -> int:
        return int(self.pi.shape[1])

    def for_arms(self, z: np.ndarray) -> np.ndarray:
        """pi_{Z_i}(X_i) for 1-based labels z."""
        z = np.asarray(z, dtype=np.int64)
        return self.pi[np.arange(self.n), z - 1]

    def subset(self, rows: np.ndarray) -> "PropensityMatrix":
        return PropensityMatrix(pi=self.pi[rows])


class OpVector(ArrayModel):
    """Outcome probability p_hat and its logit p_star, one entry per subject."""

    p_hat: np.ndarray
    p_star: np.ndarray

    @field_validator("p_hat", "p_star", mode="before")
    @classmethod
    def _coerce(cls, v):
        return frozen_array(v, ndim=1)

    @classmethod
    def from_probabilities(cls, p_hat: np.ndarray) -> "OpVector":
        p = clip_probabilities(p_hat)
        return cls(p_hat=p, p_star=logit(p))

    @classmethod
    def from_linear_predictor(cls, eta: np.ndarray) -> "OpVector":
        return cls.from_probabilities(expit(np.asarray(eta, dtype=float)))

    def subset(self, rows: np.ndarray) -> "OpVector":
        return OpVector(p_hat=self.p_hat[rows], p_star=self.p_star[rows])


class Preselection(ArrayModel):
    ysel: tuple[int, ...]
    zsel: tuple[int, ...]
    yzsel: tuple[int, ...]
    always_include: tuple[int, ...] = ()
    outcome_fit: LogisticFit
    treatment_fit: MultinomialFit | None = None

    @model_validator(mode="after")
    def _check_nesting(self):
        if not set(self.yzsel) <= set(self.ysel) or not set(self.yzsel) <= set(self.zsel):
            raise ValueError("yzsel must be contained in both ysel and zsel")
        return self

    @property
    def outcome_coef(self) -> np.ndarray:
        """Outcome coefficients for every covariate column (zero off-support)."""
        return self.outcome_fit.coef

    @property
    def outcome_standardized_coef(self) -> np.ndarray:
        return self.outcome_fit.standardized_coef


class PropensityEstimate(ArrayModel):
    """A fitted propensity matrix plus what is needed to refit the final model on a resample."""

    ps: PropensityMatrix
    route: str
    method: str
    columns: tuple[int, ...] = ()
    uses_op: bool = False
    penalized: bool = False
    lambda_: float | None = None
    adaptive_weights: np.ndarray | None = None
    first_stage: PropensityMatrix | None = None
    # design of the final model, kept so resamples can refit on the same columns
    design: DesignSpec | None = None

    @field_validator("adaptive_weights", mode="before")
    @classmethod
    def _coerce_weights(cls, v):
        return optional_frozen_array(v, ndim=1)
