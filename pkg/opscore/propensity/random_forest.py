from opscore.propensity.base import BasePropensityModel, ModelOutput
from opscore.schemas.dataset import Dataset
from opscore.schemas.fit import DesignSpec
from opscore.trees.ensemble import oob_propensity, random_forest


class RandomForestPropensityModel(BasePropensityModel):
    """Out-of-bag propensities from a forest of n_forest trees (mtry defaults to floor(sqrt(k)))."""

    def fit_predict(self, d: Dataset, spec: DesignSpec) -> ModelOutput:
        ensemble = random_forest(
            spec.build(d.x),
            d.z,
            ntree=self.method.n_forest,
            params=self.method.tree,
            n_classes=d.J,
            random_state=self.random_state,
        )
        return ModelOutput(oob_propensity(ensemble))
