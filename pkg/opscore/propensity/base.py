from abc import ABC, abstractmethod
from typing import NamedTuple

from opscore.schemas.dataset import Dataset
from opscore.schemas.fit import DesignSpec
from opscore.schemas.propensity import PropensityMatrix
from opscore.schemas.routing import MethodSpec


class ModelOutput(NamedTuple):
    ps: PropensityMatrix
    penalized: bool = False
    lambda_: float | None = None


class BasePropensityModel(ABC):
    """Final treatment model: fits z on the design described by spec and returns in-sample propensities."""

    def __init__(self, method: MethodSpec, random_state=None):
        self.method = method
        self.random_state = random_state

    @abstractmethod
    def fit_predict(self, d: Dataset, spec: DesignSpec) -> ModelOutput:
        pass

    def refit(self, d: Dataset, spec: DesignSpec, previous: ModelOutput) -> ModelOutput:
        """Refit on a resample with the tuning frozen at the original fit's values."""
        return self.fit_predict(d, spec)
