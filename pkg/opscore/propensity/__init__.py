from opscore.propensity.base import BasePropensityModel, ModelOutput
from opscore.propensity.factory import get_propensity_model

__all__ = ["BasePropensityModel", "ModelOutput", "get_propensity_model"]
