"""Interference-aware runtime prediction with conformal upper bounds.

The pipeline is: fit the linear scaling baseline, train the two-tower
residual model (mean or quantile mode), calibrate its heads per interference
pool, then predict runtime bounds at a chosen miscoverage rate.
"""

__version__ = "0.1.0"

from .baseline import BaselineModel, fit_baseline
from .conformal import CalibrationTable, build_calibration, conformal_offset, \
    overprovisioning_margin, predict_bound
from .dataset import Dataset, FeatureTable, Observation, Split, SyntheticConfig, \
    generate_synthetic, load_dataset, make_split, save_dataset, \
    transform_opcode_counts
from .errors import InfeasibleError, ParseError, UnknownPoolError, ValidationError
from .evaluation import ExperimentSpec, MetricsReport, export_embeddings, mape, \
    run_experiment, summarize
from .model import NetworkConfig, RuntimeModel, forward, init_model
from .training import LossConfig, TrainConfig, pinball_loss, train

__all__ = [
    "BaselineModel", "CalibrationTable", "Dataset", "ExperimentSpec",
    "FeatureTable", "InfeasibleError", "LossConfig", "MetricsReport",
    "NetworkConfig", "Observation", "ParseError", "RuntimeModel", "Split",
    "SyntheticConfig", "TrainConfig", "UnknownPoolError", "ValidationError",
    "build_calibration", "conformal_offset", "export_embeddings",
    "fit_baseline", "forward", "generate_synthetic", "init_model",
    "load_dataset", "make_split", "mape", "overprovisioning_margin",
    "pinball_loss", "predict_bound", "run_experiment", "save_dataset",
    "summarize", "train", "transform_opcode_counts",
]
