from opscore.core.exceptions import ConfigurationError
from opscore.propensity.bagged_cart import BaggedCartPropensityModel
from opscore.propensity.base import BasePropensityModel
from opscore.propensity.cart import CartPropensityModel
from opscore.propensity.logis import LogisPropensityModel
from opscore.propensity.pruned_cart import PrunedCartPropensityModel
from opscore.propensity.random_forest import RandomForestPropensityModel
from opscore.schemas.routing import Method, MethodSpec


def get_propensity_model(method: MethodSpec, random_state=None) -> BasePropensityModel:
    if method.method == Method.LOGIS:
        return LogisPropensityModel(method, random_state)
    elif method.method == Method.CART:
        return CartPropensityModel(method, random_state)
    elif method.method == Method.PRUNED_CART:
        return PrunedCartPropensityModel(method, random_state)
    elif method.method == Method.BAGGED_CART:
        return BaggedCartPropensityModel(method, random_state)
    elif method.method == Method.RANDOM_FOREST:
        return RandomForestPropensityModel(method, random_state)
    else:
        # OAL selects its own columns and lambda; PropensityService handles it directly
        raise ConfigurationError(f"Unsupported final treatment model: {method.method.value}")
