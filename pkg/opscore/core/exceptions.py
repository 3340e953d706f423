from typing import Sequence


class OpscoreError(Exception):
    pass


class DataValidationError(OpscoreError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid dataset")


class ConfigurationError(OpscoreError):
    pass


class ConvergenceError(OpscoreError):
    pass


class SeparationError(ConvergenceError):
    """Coefficients diverge because some linear combination separates the classes."""


class RankDeficiencyError(OpscoreError):
    def __init__(self, columns: Sequence[int], message: str | None = None):
        self.columns = [int(c) for c in columns]
        super().__init__(message or f"Design is rank deficient; collinear columns: {self.columns}")


class EstimationError(OpscoreError):
    pass


class BootstrapError(OpscoreError):
    pass


class IngestionError(OpscoreError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
