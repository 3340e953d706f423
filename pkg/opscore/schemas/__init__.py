from opscore.schemas.dataset import BinaryOutcome, CensoredOutcome, CovariateRoles, Dataset
from opscore.schemas.estimate import EffectEstimate, MetricsRow, PairMetrics, PositivityReport, WeightVector
from opscore.schemas.experiment import (
    BootstrapPolicy,
    EstimatorResult,
    ExperimentConfig,
    ExperimentResult,
    FailureRecord,
    SelectionReport,
    StudyResult,
    StudySchema,
)
from opscore.schemas.fit import (
    AdaptiveWeights,
    CoxFit,
    CvTable,
    DesignSpec,
    IpcwWeights,
    LogisticFit,
    MultinomialFit,
    TwoStepFit,
)
from opscore.schemas.propensity import OpVector, Preselection, PropensityEstimate, PropensityMatrix
from opscore.schemas.routing import Method, MethodSpec, Route
from opscore.schemas.scenario import PRESETS, ScenarioConfig, SimReplicate, scenario_preset
from opscore.schemas.tree import CpRow, Ensemble, Tree, TreeParams

__all__ = [
    "PRESETS",
    "BootstrapPolicy",
    "EstimatorResult",
    "ExperimentConfig",
    "ExperimentResult",
    "FailureRecord",
    "ScenarioConfig",
    "SelectionReport",
    "SimReplicate",
    "StudyResult",
    "StudySchema",
    "scenario_preset",
    "AdaptiveWeights",
    "BinaryOutcome",
    "CensoredOutcome",
    "CovariateRoles",
    "CoxFit",
    "CpRow",
    "CvTable",
    "Dataset",
    "DesignSpec",
    "EffectEstimate",
    "Ensemble",
    "IpcwWeights",
    "LogisticFit",
    "Method",
    "MethodSpec",
    "MetricsRow",
    "MultinomialFit",
    "OpVector",
    "PairMetrics",
    "PositivityReport",
    "Preselection",
    "PropensityEstimate",
    "PropensityMatrix",
    "Route",
    "Tree",
    "TreeParams",
    "TwoStepFit",
    "WeightVector",
]
