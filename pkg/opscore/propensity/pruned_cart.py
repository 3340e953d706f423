from opscore.core.logger import propensity_logger as logger
from opscore.propensity.base import BasePropensityModel, ModelOutput
from opscore.schemas.dataset import Dataset
from opscore.schemas.fit import DesignSpec
from opscore.trees.cart import grow_cart, predict_prob, prune_cart


class PrunedCartPropensityModel(BasePropensityModel):
    def fit_predict(self, d: Dataset, spec: DesignSpec) -> ModelOutput:
        design = spec.build(d.x)
        tree = grow_cart(design, d.z, self.method.tree, n_classes=d.J)
        pruned = prune_cart(tree, design, d.z, folds=self.method.folds, random_state=self.random_state)
        logger.debug(f"Pruned CART | {tree.n_leaves} -> {pruned.n_leaves} leaves")
        return ModelOutput(predict_prob(pruned, design))
