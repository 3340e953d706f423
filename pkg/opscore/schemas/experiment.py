import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, ValidationError, model_validator

from opscore.core.config import settings
from opscore.core.exceptions import ConfigurationError
from opscore.schemas.estimate import EffectEstimate, MetricsRow, PositivityReport
from opscore.schemas.routing import STANDARD_ROUTES, Method, MethodSpec, Route
from opscore.schemas.tree import TreeParams


class BootstrapPolicy(BaseModel):
    kind: Literal["usual", "modified", "both", "none"] = "modified"
    b: int = Field(default=200, ge=2)
    refit_censoring: bool = True
    level: float = Field(default=0.95, gt=0, lt=1)
    max_redraws: int = Field(default=50, ge=1)

    @property
    def modified(self) -> bool:
        return self.kind in ("modified", "both")

    @property
    def usual(self) -> bool:
        return self.kind in ("usual", "both")


def load_config_file(path: str | Path) -> dict:
    """Parse a TOML or JSON config file into a plain dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            return json.loads(path.read_text(encoding="utf-8"))
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigurationError(f"Could not parse {path}: {e}")


class ExperimentConfig(BaseModel):
    """One simulation experiment or one real-data study run."""

    scenario: str | None = "linear-sparse"
    n: int | None = Field(default=None, ge=2)
    data: str | None = None
    routes: list[Route] = Field(default_factory=lambda: list(STANDARD_ROUTES))
    methods: list[Method] = Field(default_factory=lambda: [Method.LOGIS])
    include_naive: bool = True
    include_oracle: bool = False
    n_sims: int = Field(default=1, ge=1)
    bootstrap: BootstrapPolicy = Field(default_factory=BootstrapPolicy)
    n_mc_truth: int = Field(default=500_000, ge=1000)
    seed: int = settings.DEFAULT_SEED
    output_dir: str = settings.OUTPUT_DIR
    positivity_eps: float = Field(default=0.01, gt=0, lt=1)

    # final-model parameters shared by every method
    tree: TreeParams = Field(default_factory=TreeParams)
    n_bagged: int = Field(default=200, ge=1)
    n_forest: int = Field(default=1000, ge=1)
    folds: int = Field(default=10, ge=2)
    mle_ratio: float = Field(default=50.0, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        if not self.routes and any(m != Method.OAL for m in self.methods):
            raise ValueError("at least one route is required for route-based methods")
        if self.scenario is None and self.data is None:
            raise ValueError("either a scenario preset or a data path is required")
        return self

    def method_spec(self, method: Method) -> MethodSpec:
        return MethodSpec(
            method=method,
            tree=self.tree,
            n_bagged=self.n_bagged,
            n_forest=self.n_forest,
            folds=self.folds,
            mle_ratio=self.mle_ratio,
        )

    def route_method_pairs(self) -> list[tuple[Route | None, MethodSpec]]:
        """(route, method) pairs in report order; OAL carries no route."""
        pairs: list[tuple[Route | None, MethodSpec]] = []
        for method in self.methods:
            if method == Method.OAL:
                pairs.append((None, self.method_spec(method)))
                continue
            routes = list(self.routes)
            for route in routes:
                pairs.append((route, self.method_spec(method)))
        return pairs

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        raw = load_config_file(path)
        raw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid experiment config {path}: {e}")


class StudySchema(BaseModel):
    """
    Column roles of a study CSV.

    Binary outcomes name `outcome`; time-to-event outcomes name `time`, `status` (1 = event)
    and `horizon`. `always_adjust` columns are unpenalized and forced into every selection;
    `covariates` is the penalized high-dimensional block (every remaining column when empty).
    """

    treatment: str
    outcome: str | None = None
    time: str | None = None
    status: str | None = None
    horizon: float | None = Field(default=None, gt=0)
    always_adjust: list[str] = Field(default_factory=list)
    covariates: list[str] = Field(default_factory=list)
    categorical: list[str] = Field(default_factory=list)
    censoring_columns: list[str] = Field(default_factory=list)
    treatment_levels: list[str] | None = None
    # group name -> column names or name prefixes, for the grouped selection report
    groups: dict[str, list[str]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        survival = self.time is not None or self.status is not None
        if survival and (self.time is None or self.status is None or self.horizon is None):
            raise ValueError("time-to-event outcomes need time, status and horizon")
        if survival == (self.outcome is not None):
            raise ValueError("declare exactly one of outcome or (time, status, horizon)")
        overlap = set(self.always_adjust) & set(self.covariates)
        if overlap:
            raise ValueError(f"columns both always-adjusted and penalized: {sorted(overlap)}")
        return self

    @property
    def is_censored(self) -> bool:
        return self.time is not None

    def reserved(self) -> set[str]:
        return {c for c in (self.treatment, self.outcome, self.time, self.status) if c is not None}

    @classmethod
    def from_file(cls, path: str | Path) -> "StudySchema":
        raw = load_config_file(path)
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid study schema {path}: {e}")


class FailureRecord(BaseModel):
    estimator: str
    replicate: int | None = None
    error_type: str
    message: str


class EstimatorResult(BaseModel):
    estimator: str
    route: str | None = None
    method: str | None = None
    estimates: list[EffectEstimate]
    usual: list[EffectEstimate] | None = None
    positivity: PositivityReport | None = None


class SelectionGroup(BaseModel):
    group: str
    n_columns: int
    ysel: list[str]
    zsel: list[str]
    yzsel: list[str]


class SelectionReport(BaseModel):
    ysel: list[str]
    zsel: list[str]
    yzsel: list[str]
    groups: list[SelectionGroup] = Field(default_factory=list)

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.ysel), len(self.zsel), len(self.yzsel)


class CiWidthRatio(BaseModel):
    method: str
    base_route: str
    op_route: str
    pair: tuple[int, int]
    ratio: float


class PsCorrelation(BaseModel):
    arm: int
    first: str
    second: str
    correlation: float


class CensoringSummary(BaseModel):
    overall: float
    per_arm: list[float]


class StudyResult(BaseModel):
    arms: list[str]
    results: list[EstimatorResult]
    selection: SelectionReport
    ci_width_ratios: list[CiWidthRatio] = Field(default_factory=list)
    ps_correlations: list[PsCorrelation] = Field(default_factory=list)
    censoring: CensoringSummary | None = None
    failures: list[FailureRecord] = Field(default_factory=list)


class ExperimentResult(BaseModel):
    scenario: str
    n: int
    n_sims: int
    seed: int
    truth: dict[str, float]
    arm_means: list[float]
    metrics: list[MetricsRow]
    usual_metrics: list[MetricsRow] = Field(default_factory=list)
    censoring_rate: float | None = None
    failures: list[FailureRecord] = Field(default_factory=list)
