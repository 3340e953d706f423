from enum import Enum

from pydantic import BaseModel, Field

from opscore.schemas.tree import TreeParams


class Route(str, Enum):
    ALL = "all"
    YSEL = "ysel"
    YZSEL = "yzsel"
    OP_ALL = "op_all"
    OP_YSEL = "op_ysel"
    OP_YZSEL = "op_yzsel"
    # Oracle routes need the simulation's CovariateRoles
    CONFOUNDERS = "confounders"
    TREATMENT_PREDICTORS = "treatment_predictors"
    OUTCOME_PREDICTORS = "outcome_predictors"

    @property
    def uses_op(self) -> bool:
        return self in (Route.OP_ALL, Route.OP_YSEL, Route.OP_YZSEL)

    @property
    def base(self) -> "Route":
        return {Route.OP_ALL: Route.ALL, Route.OP_YSEL: Route.YSEL, Route.OP_YZSEL: Route.YZSEL}.get(self, self)

    @property
    def is_oracle(self) -> bool:
        return self in (Route.CONFOUNDERS, Route.TREATMENT_PREDICTORS, Route.OUTCOME_PREDICTORS)

    @property
    def is_selection_based(self) -> bool:
        return self.base in (Route.YSEL, Route.YZSEL)

    @property
    def label(self) -> str:
        return {
            Route.ALL: "All",
            Route.YSEL: "Ysel",
            Route.YZSEL: "YZsel",
            Route.OP_ALL: "OP+All",
            Route.OP_YSEL: "OP+Ysel",
            Route.OP_YZSEL: "OP+YZsel",
            Route.CONFOUNDERS: "X_C",
            Route.TREATMENT_PREDICTORS: "X_C+X_Z",
            Route.OUTCOME_PREDICTORS: "X_C+X_Y",
        }[self]


STANDARD_ROUTES = (Route.ALL, Route.YSEL, Route.YZSEL, Route.OP_ALL, Route.OP_YSEL, Route.OP_YZSEL)
ORACLE_ROUTES = (Route.CONFOUNDERS, Route.TREATMENT_PREDICTORS, Route.OUTCOME_PREDICTORS)


class Method(str, Enum):
    LOGIS = "logis"
    CART = "cart"
    PRUNED_CART = "pruned_cart"
    BAGGED_CART = "bagged_cart"
    RANDOM_FOREST = "random_forest"
    OAL = "oal"

    @property
    def is_tree(self) -> bool:
        return self in (Method.CART, Method.PRUNED_CART, Method.BAGGED_CART, Method.RANDOM_FOREST)

    @property
    def label(self) -> str:
        return {
            Method.LOGIS: "LOGIS",
            Method.CART: "CART",
            Method.PRUNED_CART: "Pruned CART",
            Method.BAGGED_CART: "Bagged CART",
            Method.RANDOM_FOREST: "Random forests",
            Method.OAL: "OAL",
        }[self]


class MethodSpec(BaseModel):
    method: Method
    tree: TreeParams = Field(default_factory=TreeParams)
    n_bagged: int = Field(default=200, ge=1)
    n_forest: int = Field(default=1000, ge=1)
    folds: int = Field(default=10, ge=2)
    # Logis uses maximum likelihood while (columns + 1) <= n / mle_ratio
    mle_ratio: float = Field(default=50.0, gt=0)
