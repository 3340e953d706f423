from opscore.trees.cart import apply, best_split, grow_cart, predict_class, predict_prob, prune_cart, pruning_sequence, subtree
from opscore.trees.ensemble import bag_cart, oob_propensity, random_forest
from opscore.trees.ensemble import predict_prob as predict_ensemble_prob

__all__ = [
    "apply",
    "bag_cart",
    "best_split",
    "grow_cart",
    "oob_propensity",
    "predict_class",
    "predict_ensemble_prob",
    "predict_prob",
    "prune_cart",
    "pruning_sequence",
    "random_forest",
    "subtree",
]
