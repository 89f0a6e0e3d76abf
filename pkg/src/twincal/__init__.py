"""Monte-Carlo calibration of detector quantum efficiency with twin beams."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .analytic import Prediction, predict, regime_classify
from .calib import CalibrationReport
from .config import AnalysisConfig, ExperimentSpec, Sweep, dump_spec, load_spec
from .corr import CorrelationFunction, CountingStats, Estimate
from .detector import ChargeModel, CurrentTrace, DetectorConfig, PulseShape
from .errors import BalanceError, ConfigError, EstimatorError
from .source import CountFrame, SourceConfig

__all__ = [
    "BACKEND", "AnalysisConfig", "BalanceError", "CalibrationReport", "ChargeModel", "ConfigError",
    "CorrelationFunction", "CountFrame", "CountingStats", "CurrentTrace", "DetectorConfig", "Estimate",
    "EstimatorError", "ExperimentSpec", "Prediction", "PulseShape", "SourceConfig", "Sweep", "dump_spec",
    "load_spec", "predict", "regime_classify",
]
