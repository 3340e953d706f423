from opscore.propensity.base import BasePropensityModel, ModelOutput
from opscore.schemas.dataset import Dataset
from opscore.schemas.fit import DesignSpec
from opscore.trees.ensemble import bag_cart, oob_propensity


class BaggedCartPropensityModel(BasePropensityModel):
    """Out-of-bag propensities from n_bagged bootstrap CART trees."""

    def fit_predict(self, d: Dataset, spec: DesignSpec) -> ModelOutput:
        ensemble = bag_cart(
            spec.build(d.x), d.z, b=self.method.n_bagged, params=self.method.tree, n_classes=d.J, random_state=self.random_state
        )
        return ModelOutput(oob_propensity(ensemble))
