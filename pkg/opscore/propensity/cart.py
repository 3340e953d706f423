from opscore.core.logger import propensity_logger as logger
from opscore.propensity.base import BasePropensityModel, ModelOutput
from opscore.schemas.dataset import Dataset
from opscore.schemas.fit import DesignSpec
from opscore.trees.cart import grow_cart, predict_prob


class CartPropensityModel(BasePropensityModel):
    """Single CART tree grown with the cp stopping rule; Laplace-smoothed leaf probabilities."""

    def fit_predict(self, d: Dataset, spec: DesignSpec) -> ModelOutput:
        design = spec.build(d.x)
        tree = grow_cart(design, d.z, self.method.tree, n_classes=d.J)
        logger.debug(f"CART | {tree.n_leaves} leaves on {design.shape[1]} columns")
        return ModelOutput(predict_prob(tree, design))
