from typing import Mapping, Sequence

import numpy as np

from opscore.core.exceptions import EstimationError
from opscore.schemas.estimate import EffectEstimate, MetricsRow, PairMetrics


class MetricsService:
    """Monte Carlo summaries of effect estimates against known truths"""

    @staticmethod
    def aggregate_metrics(
        truth: Mapping[tuple[int, int], float],
        estimates: Sequence[Sequence[EffectEstimate]],
        estimator: str = "",
        failures: int = 0,
    ) -> MetricsRow:
        """
        Bias, MC standard deviation, RMSE, mean SE and CI coverage per pair over replicates.

        mc_sd needs two replicates; mean_se and coverage are reported only when every
        replicate carries an SE (resp. a CI).
        """
        if not estimates:
            raise EstimationError(f"no replicates to summarize for '{estimator}'")
        pair_sets = {tuple(e.pair for e in rep) for rep in estimates}
        if len(pair_sets) != 1:
            raise EstimationError(f"replicates of '{estimator}' do not share one pair set")
        pairs = next(iter(pair_sets))
        m = len(estimates)

        rows = []
        for k, pair in enumerate(pairs):
            if pair not in truth:
                raise EstimationError(f"no true value for pair {pair}")
            tau = float(truth[pair])
            column = [rep[k] for rep in estimates]
            tau_hat = np.array([e.tau_hat for e in column])
            err = tau_hat - tau
            mean_se = None
            if all(e.se is not None for e in column):
                mean_se = float(np.mean([e.se for e in column]))
            coverage = None
            if all(e.ci is not None for e in column):
                coverage = 100.0 * float(np.mean([e.ci[0] <= tau <= e.ci[1] for e in column]))
            rows.append(
                PairMetrics(
                    pair=pair,
                    truth=tau,
                    bias=float(np.mean(err)),
                    mc_sd=float(np.std(tau_hat, ddof=1)) if m > 1 else None,
                    rmse=float(np.sqrt(np.mean(err**2))),
                    mean_se=mean_se,
                    coverage_pct=coverage,
                )
            )
        return MetricsRow(estimator=estimator, n_replicates=m, pairs=rows, failures=failures)
