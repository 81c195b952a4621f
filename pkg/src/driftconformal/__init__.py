"""Adaptive rolling-window prediction intervals for drifting data streams."""

from .conformal import *  # noqa: F401,F403
from .drift_lab import *  # noqa: F401,F403
from .evaluation import *  # noqa: F401,F403
from .experiment import *  # noqa: F401,F403
from .quantile_core import *  # noqa: F401,F403

from . import conformal, drift_lab, evaluation, experiment, quantile_core

__version__ = "0.1.0"
__all__ = [
    *quantile_core.__all__,
    *conformal.__all__,
    *drift_lab.__all__,
    *evaluation.__all__,
    *experiment.__all__,
]
