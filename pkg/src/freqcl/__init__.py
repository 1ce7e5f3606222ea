"""Frequency-decoupled dual-branch networks for rehearsal-based continual learning."""

from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateVarianceError,
    GraphError,
    NumericalError,
    ShapeError,
)
from .tensor import Parameter, Tensor, default_dtype, no_grad
from .wavelet import (
    FrequencyPair,
    PointwiseFuser,
    Selection,
    WaveletQuad,
    dwt2d,
    high_pass,
    idwt2d,
    low_pass,
)
from .model import (
    AggregatorVariant,
    BackboneConfig,
    DualNet,
    ResNet,
    ScalingMode,
    build_baseline,
    build_dual_net,
    flops_forward,
    flops_train,
    param_count,
)
from .rehearsal import ReplayBuffer, StrategyConfig, StrategyKind, make_strategy
from .trainer import AccuracyMatrix, EvalMode, average_accuracy, evaluate, forgetting, split_tasks
from .estimator import FrequencyReplayClassifier, HaarDecomposer
from .config import ExperimentConfig, parse_config
from .experiment import run_experiment

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix",
    "AggregatorVariant",
    "BackboneConfig",
    "ConfigError",
    "DataFormatError",
    "DegenerateVarianceError",
    "DualNet",
    "EvalMode",
    "ExperimentConfig",
    "FrequencyPair",
    "FrequencyReplayClassifier",
    "GraphError",
    "HaarDecomposer",
    "NumericalError",
    "Parameter",
    "PointwiseFuser",
    "ReplayBuffer",
    "ResNet",
    "ScalingMode",
    "Selection",
    "ShapeError",
    "StrategyConfig",
    "StrategyKind",
    "Tensor",
    "WaveletQuad",
    "average_accuracy",
    "build_baseline",
    "build_dual_net",
    "default_dtype",
    "dwt2d",
    "evaluate",
    "flops_forward",
    "flops_train",
    "forgetting",
    "high_pass",
    "idwt2d",
    "low_pass",
    "make_strategy",
    "no_grad",
    "param_count",
    "parse_config",
    "run_experiment",
    "split_tasks",
]
