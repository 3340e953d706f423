from typing import Annotated, Literal, Union

import numpy as np
from pydantic import Field, field_validator

from opscore.schemas.base import ArrayModel, frozen_array


class BinaryOutcome(ArrayModel):
    kind: Literal["binary"] = "binary"
    y: np.ndarray

    @field_validator("y", mode="before")
    @classmethod
    def _coerce_y(cls, v):
        return frozen_array(v, dtype=float, ndim=1)

    @property
    def observed(self) -> np.ndarray:
        return np.ones(self.y.shape[0], dtype=bool)

    def subset(self, rows: np.ndarray) -> "BinaryOutcome":
        return BinaryOutcome(y=self.y[rows])


class CensoredOutcome(ArrayModel):
    """
    Possibly right-censored binary outcome Y = I(T < d).

    t_obs is min(T, C); r is the indicator of observing Y, i.e. I{C >= min(T, d)};
    y holds NaN wherever r == 0.
    """

    kind: Literal["censored"] = "censored"
    t_obs: np.ndarray
    r: np.ndarray
    horizon: float = Field(gt=0)
    y: np.ndarray

    @field_validator("t_obs", "y", mode="before")
    @classmethod
    def _coerce_real(cls, v):
        return frozen_array(v, dtype=float, ndim=1)

    @field_validator("r", mode="before")
    @classmethod
    def _coerce_r(cls, v):
        return frozen_array(v, dtype=np.int64, ndim=1)

    @property
    def observed(self) -> np.ndarray:
        return self.r == 1

    @property
    def follow_up(self) -> np.ndarray:
        """min(T, C, d) for every subject."""
        return np.minimum(self.t_obs, self.horizon)

    def subset(self, rows: np.ndarray) -> "CensoredOutcome":
        return CensoredOutcome(t_obs=self.t_obs[rows], r=self.r[rows], horizon=self.horizon, y=self.y[rows])


OutcomeRecord = Annotated[Union[BinaryOutcome, CensoredOutcome], Field(discriminator="kind")]


class CovariateRoles(ArrayModel):
    conf: tuple[int, ...]
    treat_only: tuple[int, ...]
    out_only: tuple[int, ...]
    spurious: tuple[int, ...]

    @property
    def confounders_and_treatment(self) -> tuple[int, ...]:
        return tuple(sorted(self.conf + self.treat_only))

    @property
    def confounders_and_outcome(self) -> tuple[int, ...]:
        return tuple(sorted(self.conf + self.out_only))


class Dataset(ArrayModel):
    """
    n subjects, p covariates, treatment labels 1..J and an outcome record.

    Rows are addressed 0..n-1; treatment labels keep the 1-based arm numbering so that
    column j-1 of a PropensityMatrix belongs to arm j.
    """

    x: np.ndarray
    z: np.ndarray
    outcome: OutcomeRecord
    n_arms: int | None = None
    roles: CovariateRoles | None = None
    column_names: tuple[str, ...] | None = None

    @field_validator("x", mode="before")
    @classmethod
    def _coerce_x(cls, v):
        arr = frozen_array(v, dtype=float)
        if arr.ndim == 1:
            arr = frozen_array(arr.reshape(-1, 1))
        if arr.ndim != 2:
            raise ValueError(f"x must be a matrix, got shape {arr.shape}")
        return arr

    @field_validator("z", mode="before")
    @classmethod
    def _coerce_z(cls, v):
        return frozen_array(v, dtype=np.int64, ndim=1)

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    @property
    def J(self) -> int:
        if self.n_arms is not None:
            return int(self.n_arms)
        return int(self.z.max()) if self.z.size else 0

    @property
    def arm_index(self) -> np.ndarray:
        """Zero-based arm index (z - 1)."""
        return self.z - 1

    @property
    def is_censored(self) -> bool:
        return isinstance(self.outcome, CensoredOutcome)

    def names(self) -> tuple[str, ...]:
        if self.column_names is not None:
            return self.column_names
        return tuple(f"x{k + 1}" for k in range(self.p))

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            x=self.x[rows],
            z=self.z[rows],
            outcome=self.outcome.subset(rows),
            n_arms=self.J,
            roles=self.roles,
            column_names=self.column_names,
        )
