"""
Services module - estimation, resampling, simulation and reporting
"""
from opscore.services.bootstrap_service import BootstrapService
from opscore.services.dataset_service import DatasetService
from opscore.services.effect_service import EffectService
from opscore.services.experiment_service import ExperimentService
from opscore.services.ingestion_service import IngestionService
from opscore.services.metrics_service import MetricsService
from opscore.services.propensity_service import PropensityService
from opscore.services.report_service import ReportService
from opscore.services.selection_service import SelectionService
from opscore.services.simulation_service import SimulationService

__all__ = [
    "BootstrapService",
    "DatasetService",
    "EffectService",
    "ExperimentService",
    "IngestionService",
    "MetricsService",
    "PropensityService",
    "ReportService",
    "SelectionService",
    "SimulationService",
]
