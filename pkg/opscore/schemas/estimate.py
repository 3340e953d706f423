from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator

from opscore.schemas.base import ArrayModel, frozen_array


class EffectEstimate(BaseModel):
    """tau(j, j') = E{Y^(j')} - E{Y^(j)} for 1-based arms j, j'."""

    pair: tuple[int, int]
    tau_hat: float
    se: float | None = Field(default=None, ge=0)
    ci: tuple[float, float] | None = None

    @property
    def pair_label(self) -> str:
        return f"{self.pair[0]} vs {self.pair[1]}"


class WeightVector(ArrayModel):
    w: np.ndarray
    kind: Literal["plain", "ipcw"] = "plain"

    @field_validator("w", mode="before")
    @classmethod
    def _coerce_w(cls, v):
        arr = frozen_array(v, ndim=1)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("weights must be finite and positive")
        return arr


class PositivityReport(BaseModel):
    eps: float
    min_pi: list[float]
    count_below: list[int]
    flagged_rows: int
    max_weight: float


class PairMetrics(BaseModel):
    pair: tuple[int, int]
    truth: float
    bias: float
    mc_sd: float | None = None
    rmse: float
    mean_se: float | None = None
    coverage_pct: float | None = None


class MetricsRow(BaseModel):
    estimator: str
    n_replicates: int
    pairs: list[PairMetrics]
    failures: int = 0
