import numpy as np

from opscore.core.exceptions import DataValidationError
from opscore.core.logger import service_logger as logger
from opscore.schemas.dataset import CensoredOutcome, Dataset


class DatasetService:
    """Invariant checks on datasets before any model sees them"""

    @staticmethod
    def validate_dataset(d: Dataset) -> list[str]:
        """Every invariant violation found in d; an empty list means the dataset is usable."""
        violations: list[str] = []
        n, J = d.n, d.J

        if not np.all(np.isfinite(d.x)):
            bad = np.argwhere(~np.isfinite(d.x))
            row, col = bad[0]
            violations.append(f"non-finite covariate value ({bad.shape[0]} cells, first at row {row}, column {col})")
        if d.z.shape[0] != n:
            violations.append(f"treatment has {d.z.shape[0]} labels for {n} rows")
            return violations

        out_of_range = (d.z < 1) | (d.z > J)
        if out_of_range.any():
            labels = sorted(set(int(v) for v in d.z[out_of_range]))
            violations.append(f"label out of range: {labels} not in 1..{J}")
        if J < 2:
            violations.append(f"at least two treatment arms are required, found {J}")
        if n < J:
            violations.append(f"n={n} is smaller than the number of arms J={J}")
        missing = [j for j in range(1, J + 1) if not np.any(d.z == j)]
        if missing:
            violations.append(f"treatment arms with no subjects: {missing}")

        violations.extend(DatasetService._outcome_violations(d))

        if d.roles is not None:
            sets = [set(d.roles.conf), set(d.roles.treat_only), set(d.roles.out_only), set(d.roles.spurious)]
            total = sum(len(s) for s in sets)
            union = set().union(*sets)
            if total != len(union):
                violations.append("covariate roles overlap")
            if union != set(range(d.p)):
                violations.append(f"covariate roles do not partition the {d.p} columns")
        if d.column_names is not None and len(d.column_names) != d.p:
            violations.append(f"{len(d.column_names)} column names for {d.p} columns")

        if violations:
            logger.debug(f"Dataset validation | n={n} p={d.p} J={J} | {len(violations)} violations")
        return violations

    @staticmethod
    def _outcome_violations(d: Dataset) -> list[str]:
        out = d.outcome
        if out.y.shape[0] != d.n:
            return [f"outcome has {out.y.shape[0]} entries for {d.n} rows"]
        if not isinstance(out, CensoredOutcome):
            if not np.all(np.isin(out.y, (0.0, 1.0))):
                return ["binary outcome contains values other than 0/1"]
            return []

        violations = []
        if not np.all(np.isin(out.r, (0, 1))):
            violations.append("observation indicator r contains values other than 0/1")
        if not np.all(np.isfinite(out.t_obs)) or np.any(out.t_obs < 0):
            violations.append("observed times must be finite and nonnegative")
        seen = out.r == 1
        if np.any(seen & np.isnan(out.y)):
            violations.append(f"{int(np.sum(seen & np.isnan(out.y)))} observed rows (r=1) have no outcome")
        if np.any(seen & ~np.isnan(out.y) & ~np.isin(out.y, (0.0, 1.0))):
            violations.append("observed outcomes contain values other than 0/1")
        if np.any(~seen & ~np.isnan(out.y)):
            violations.append(f"{int(np.sum(~seen & ~np.isnan(out.y)))} unobserved rows (r=0) carry an outcome")
        late = seen & (out.y == 1) & (out.t_obs >= out.horizon)
        if late.any():
            violations.append(f"{int(late.sum())} events recorded at or after the horizon {out.horizon}")
        return violations

    @staticmethod
    def require_valid(d: Dataset) -> Dataset:
        violations = DatasetService.validate_dataset(d)
        if violations:
            logger.error(f"Dataset rejected: {'; '.join(violations)}")
            raise DataValidationError(violations)
        return d
