from opscore.core.logger import propensity_logger as logger
from opscore.glm.multinomial import (
    cv_multinomial_group_lasso,
    fit_multinomial_group_lasso,
    fit_multinomial_mle,
    predict_multinomial,
)
from opscore.propensity.base import BasePropensityModel, ModelOutput
from opscore.schemas.dataset import Dataset
from opscore.schemas.fit import DesignSpec


class LogisPropensityModel(BasePropensityModel):
    """
    Multinomial logistic treatment model.

    Maximum likelihood while (columns + 1) <= n / mle_ratio, otherwise group lasso with
    lambda chosen by CV (min criterion); exempt columns (the OP) stay unpenalized.
    """

    def use_mle(self, d: Dataset, spec: DesignSpec) -> bool:
        return spec.n_columns + 1 <= d.n / self.method.mle_ratio

    def fit_predict(self, d: Dataset, spec: DesignSpec) -> ModelOutput:
        design = spec.build(d.x)
        if self.use_mle(d, spec):
            fit = fit_multinomial_mle(d, spec)
            logger.debug(f"Logis | MLE on {spec.n_columns} columns")
            return ModelOutput(predict_multinomial(fit, design), penalized=False)
        fit = cv_multinomial_group_lasso(
            d, spec, folds=self.method.folds, criterion="min", random_state=self.random_state
        )
        logger.debug(f"Logis | group lasso on {spec.n_columns} columns | lambda={fit.lambda_:.4g} active={fit.support.size}")
        return ModelOutput(predict_multinomial(fit, design), penalized=True, lambda_=fit.lambda_)

    def refit(self, d: Dataset, spec: DesignSpec, previous: ModelOutput) -> ModelOutput:
        design = spec.build(d.x)
        if previous.penalized:
            fit = fit_multinomial_group_lasso(d, spec, previous.lambda_)
            return ModelOutput(predict_multinomial(fit, design), penalized=True, lambda_=previous.lambda_)
        fit = fit_multinomial_mle(d, spec, strict=False)
        return ModelOutput(predict_multinomial(fit, design), penalized=False)
