"""Spiking networks with membrane-potential batch normalization and threshold folding."""
from .errors import (
    ConfigError,
    DegenerateScaleError,
    DimensionError,
    InputError,
    LoadError,
    NonFiniteError,
    ParseError,
    SNNError,
    StateError,
    UnsupportedGranularityError,
)
from .neuron import FiringRule, LifConfig, LifState
from .norm import NormParams
from .network import LayerSpec, Model, OpCounter, build_model, cross_entropy, forward, stbp_backward
from .reparam import FoldReport, fold_conv_bn, fold_model, fold_mpbn
from .train import RunLog, TrainConfig, landscape_1d, train

__version__ = "0.1.0"
