"""Built-in model classes."""

from .ma2 import Ma2Model, ma2_autocovariance, ma2_in_support, ma2_metric, ma2_output
from .oscillator import (
    C_SCALE,
    K_SCALE,
    OscillatorModel,
    euclidean_metric,
    make_white_noise_force,
    oscillator_discretize,
    oscillator_simulate,
)
from .toy import ToyUniformModel

__all__ = [
    "C_SCALE",
    "K_SCALE",
    "Ma2Model",
    "OscillatorModel",
    "ToyUniformModel",
    "euclidean_metric",
    "ma2_autocovariance",
    "ma2_in_support",
    "ma2_metric",
    "ma2_output",
    "make_white_noise_force",
    "oscillator_discretize",
    "oscillator_simulate",
]
