from typing import Sequence

import numpy as np

from opscore.core.logger import propensity_logger as logger
from opscore.glm.logistic import cv_logistic_lasso, predict_binary
from opscore.glm.multinomial import cv_multinomial_group_lasso
from opscore.schemas.dataset import CensoredOutcome, Dataset
from opscore.schemas.fit import DesignSpec
from opscore.schemas.propensity import OpVector, Preselection


class SelectionService:
    """Pre-selection of covariates by the outcome and treatment models, and the OP built from the outcome fit"""

    @staticmethod
    def selection_spec(p: int, always_include: Sequence[int] = ()) -> DesignSpec:
        always = set(int(c) for c in always_include)
        return DesignSpec(columns=tuple(range(p)), exempt=tuple(k in always for k in range(p)))

    @staticmethod
    def preselect(
        d: Dataset,
        always_include: Sequence[int] = (),
        folds: int = 10,
        random_state=None,
        outcome: np.ndarray | None = None,
    ) -> tuple[Preselection, OpVector]:
        """
        ysel: support of the CV (one-SE) outcome lasso of Y on X, treatment excluded;
        zsel: support of the CV (one-SE) multinomial group lasso of Z on X;
        yzsel = ysel & zsel. always_include columns are unpenalized and forced into both.

        Under censoring the outcome model uses the rows with an observed outcome; the OP
        is then predicted for every row.
        """
        always = tuple(sorted(set(int(c) for c in always_include)))
        spec = SelectionService.selection_spec(d.p, always)

        if outcome is not None:
            rows = np.arange(d.n)
            y = np.asarray(outcome, dtype=float)
        elif isinstance(d.outcome, CensoredOutcome):
            rows = np.flatnonzero(d.outcome.r == 1)
            y = d.outcome.y[rows]
        else:
            rows = np.arange(d.n)
            y = d.outcome.y
        d_out = d if rows.size == d.n else d.subset(rows)
        outcome_fit = cv_logistic_lasso(d_out, y, spec, folds=folds, criterion="one_se", random_state=random_state)
        treatment_fit = cv_multinomial_group_lasso(d, spec, folds=folds, criterion="one_se", random_state=random_state)

        ysel = sorted(set(int(k) for k in outcome_fit.support) | set(always))
        zsel = sorted(set(int(k) for k in treatment_fit.support) | set(always))
        yzsel = sorted(set(ysel) & set(zsel))
        if not outcome_fit.support.size:
            logger.warning("Outcome lasso selected no covariates; the OP is the intercept-only probability")
        op = OpVector.from_probabilities(predict_binary(outcome_fit, d.x))
        logger.info(
            f"Pre-selection | n={d.n} p={d.p} | ysel={len(ysel)} zsel={len(zsel)} yzsel={len(yzsel)} always={len(always)}"
        )
        pre = Preselection(
            ysel=tuple(ysel),
            zsel=tuple(zsel),
            yzsel=tuple(yzsel),
            always_include=always,
            outcome_fit=outcome_fit,
            treatment_fit=treatment_fit,
        )
        return pre, op
