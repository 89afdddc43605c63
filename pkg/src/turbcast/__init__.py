"""Semi-supervised spatio-temporal turbulence forecasting toolkit."""

from .errors import (
    ConfigurationError,
    DegenerateInputError,
    GeometryError,
    NumericalError,
    ShapeError,
    TurbcastError,
    UsageError,
    ValidationError,
)
from .grids import (
    CHANNEL_NAMES,
    CLASS_NAMES,
    NUM_CLASSES,
    UNKNOWN,
    ClassDistribution,
    CubeKind,
    CubeSample,
    FeatureCube,
    LabelCube,
    RegionSpec,
)
from .indexes import RawWeatherGrid, build_feature_cube
from .models import ConvLstmCell, CubeDetector, SequenceForecaster
from .synthetic import SyntheticConfig, build_synthetic_dataset, generate_synthetic
from .training import TrainConfig, Trainer, forecast, load_trained
from .metrics import EvalReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "CHANNEL_NAMES",
    "CLASS_NAMES",
    "NUM_CLASSES",
    "UNKNOWN",
    "ClassDistribution",
    "ConfigurationError",
    "ConvLstmCell",
    "CubeDetector",
    "CubeKind",
    "CubeSample",
    "DegenerateInputError",
    "EvalReport",
    "FeatureCube",
    "GeometryError",
    "LabelCube",
    "NumericalError",
    "RawWeatherGrid",
    "RegionSpec",
    "SequenceForecaster",
    "ShapeError",
    "SyntheticConfig",
    "TrainConfig",
    "Trainer",
    "TurbcastError",
    "UsageError",
    "ValidationError",
    "build_feature_cube",
    "build_synthetic_dataset",
    "evaluate",
    "forecast",
    "generate_synthetic",
    "load_trained",
]
