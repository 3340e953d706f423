from opscore.glm.logistic import (
    binomial_deviance,
    cv_logistic_lasso,
    fit_logistic_lasso,
    fit_logistic_mle,
    logistic_kkt_residual,
    logistic_lambda_max,
    predict_binary,
)
from opscore.glm.multinomial import (
    cv_multinomial_group_lasso,
    fit_adaptive_group_lasso,
    fit_multinomial_group_lasso,
    fit_multinomial_mle,
    group_lambda_max,
    multinomial_deviance,
    multinomial_kkt_residual,
    one_hot,
    predict_multinomial,
)

__all__ = [
    "binomial_deviance",
    "cv_logistic_lasso",
    "cv_multinomial_group_lasso",
    "fit_adaptive_group_lasso",
    "fit_logistic_lasso",
    "fit_logistic_mle",
    "fit_multinomial_group_lasso",
    "fit_multinomial_mle",
    "group_lambda_max",
    "logistic_kkt_residual",
    "logistic_lambda_max",
    "multinomial_deviance",
    "multinomial_kkt_residual",
    "one_hot",
    "predict_binary",
    "predict_multinomial",
]
