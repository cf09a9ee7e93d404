"""Physics-informed neural network fits of FitzHugh-Nagumo and Hodgkin-Huxley neurons."""

from .errors import DataFormatError, DegenerateWindowError, NumericFailure, SingularParameterError
from .models import FnParams, HhParams, ScalingSpec
from .pinn import FitResult, Observations, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DataFormatError",
    "DegenerateWindowError",
    "FitResult",
    "FnParams",
    "HhParams",
    "NumericFailure",
    "Observations",
    "ScalingSpec",
    "SingularParameterError",
    "TrainConfig",
    "train",
]
