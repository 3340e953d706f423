import numpy as np
from pydantic import Field, field_validator, model_validator

from opscore.schemas.base import ArrayModel, frozen_array, optional_frozen_array


class DesignSpec(ArrayModel):
    """
    Which columns of Dataset.x enter a model, plus optional appended real columns (e.g. the OP).

    exempt has one flag per design column (selected columns first, then extra columns);
    the intercept is always unpenalized.
    """

    columns: tuple[int, ...] = ()
    extra: np.ndarray | None = None
    extra_names: tuple[str, ...] = ()
    intercept: bool = True
    exempt: tuple[bool, ...] | None = None

    @field_validator("extra", mode="before")
    @classmethod
    def _coerce_extra(cls, v):
        if v is None:
            return None
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        return frozen_array(arr, ndim=2)

    @model_validator(mode="after")
    def _check_exempt(self):
        if self.exempt is not None and len(self.exempt) != self.n_columns:
            raise ValueError(f"exempt mask has {len(self.exempt)} entries for {self.n_columns} columns")
        return self

    @property
    def n_extra(self) -> int:
        return 0 if self.extra is None else int(self.extra.shape[1])

    @property
    def n_columns(self) -> int:
        return len(self.columns) + self.n_extra

    @property
    def exempt_mask(self) -> np.ndarray:
        if self.exempt is None:
            return np.zeros(self.n_columns, dtype=bool)
        return np.asarray(self.exempt, dtype=bool)

    def build(self, x: np.ndarray) -> np.ndarray:
        """Design matrix (without intercept column) for the rows of x."""
        parts = [np.asarray(x, dtype=float)[:, list(self.columns)]]
        if self.extra is not None:
            if self.extra.shape[0] != x.shape[0]:
                raise ValueError("extra columns do not match the number of rows")
            parts.append(self.extra)
        return np.hstack(parts)

    def subset_rows(self, rows: np.ndarray) -> "DesignSpec":
        if self.extra is None:
            return self
        return self.model_copy(update={"extra": frozen_array(self.extra[rows], ndim=2)})


class CvTable(ArrayModel):
    lambdas: np.ndarray
    cvm: np.ndarray
    cvsd: np.ndarray
    nonzero: np.ndarray
    lambda_min: float
    lambda_1se: float
    criterion: str

    @field_validator("lambdas", "cvm", "cvsd", mode="before")
    @classmethod
    def _coerce(cls, v):
        return frozen_array(v, ndim=1)

    @field_validator("nonzero", mode="before")
    @classmethod
    def _coerce_nonzero(cls, v):
        return frozen_array(v, dtype=np.int64, ndim=1)


class LogisticFit(ArrayModel):
    """theta = (intercept, column coefficients) on the original covariate scale."""

    theta: np.ndarray
    lambda_: float | None = None
    cv_table: CvTable | None = None
    scale: np.ndarray | None = None
    penalized: bool = False
    intercept: bool = True
    n_iter: int = 0

    @field_validator("theta", mode="before")
    @classmethod
    def _coerce_theta(cls, v):
        return frozen_array(v, ndim=1)

    @field_validator("scale", mode="before")
    @classmethod
    def _coerce_scale(cls, v):
        return optional_frozen_array(v, ndim=1)

    @property
    def coef(self) -> np.ndarray:
        return self.theta[1:]

    @property
    def standardized_coef(self) -> np.ndarray:
        if self.scale is None:
            return self.coef
        return self.coef * self.scale

    @property
    def support(self) -> np.ndarray:
        """Positions (into the design columns) with a nonzero coefficient."""
        return np.flatnonzero(self.coef != 0)


class MultinomialFit(ArrayModel):
    """
    psi is J x (k+1), column 0 holding the intercepts.

    symmetric: every column of psi sums to zero over arms (penalized fits);
    reference: the last arm's row is pinned at zero (maximum likelihood fits).
    """

    psi: np.ndarray
    parameterization: str = "symmetric"
    lambda_: float | None = None
    cv_table: CvTable | None = None
    scale: np.ndarray | None = None
    weights: np.ndarray | None = None
    penalized: bool = False
    n_iter: int = 0

    @field_validator("psi", mode="before")
    @classmethod
    def _coerce_psi(cls, v):
        return frozen_array(v, ndim=2)

    @field_validator("scale", "weights", mode="before")
    @classmethod
    def _coerce_optional(cls, v):
        return optional_frozen_array(v, ndim=1)

    @property
    def n_arms(self) -> int:
        return int(self.psi.shape[0])

    @property
    def group_norms(self) -> np.ndarray:
        return np.linalg.norm(self.psi[:, 1:], axis=0)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.group_norms > 0)


class AdaptiveWeights(ArrayModel):
    w: np.ndarray

    @field_validator("w", mode="before")
    @classmethod
    def _coerce_w(cls, v):
        arr = frozen_array(v, ndim=1)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise ValueError("adaptive weights must be nonnegative")
        return arr

    @classmethod
    def from_outcome_coefficients(cls, coef: np.ndarray, exponent: float = 1.0) -> "AdaptiveWeights":
        coef = np.abs(np.asarray(coef, dtype=float))
        w = np.full(coef.shape, np.inf)
        nz = coef > 0
        w[nz] = coef[nz] ** (-exponent)
        return cls(w=w)

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.w)


class CoxFit(ArrayModel):
    """Censoring hazard for one treatment stratum: lambda_0j(t) exp(u'gamma_j), Breslow baseline."""

    stratum: int
    columns: tuple[int, ...] = ()
    gamma: np.ndarray
    jump_times: np.ndarray
    increments: np.ndarray
    n_events: int = 0
    n_iter: int = 0

    @field_validator("gamma", "jump_times", "increments", mode="before")
    @classmethod
    def _coerce(cls, v):
        return frozen_array(v, ndim=1)

    @property
    def cumulative_hazard(self) -> np.ndarray:
        return np.cumsum(self.increments)


class IpcwWeights(ArrayModel):
    w_star: np.ndarray
    pi_z: np.ndarray
    surv: np.ndarray

    @field_validator("w_star", "pi_z", "surv", mode="before")
    @classmethod
    def _coerce(cls, v):
        return frozen_array(v, ndim=1)


class TwoStepFit(ArrayModel):
    phi0: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    dropped: tuple[int, ...] = Field(default=(), description="indices of PS columns dropped for collinearity")

    @field_validator("phi0", "phi", mode="before")
    @classmethod
    def _coerce_vec(cls, v):
        return frozen_array(v, ndim=1)

    @field_validator("eta", mode="before")
    @classmethod
    def _coerce_eta(cls, v):
        return frozen_array(v, ndim=2)
