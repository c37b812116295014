"""Numerical laboratory for splitting of separatrices and Arnold diffusion in
the a-priori-unstable rotator-pendulum system."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .errors import (BudgetError, ConfigError, NonConvergenceError, RefusalError,
                     ResolutionError, SmallDivisorError, SplitlabError)
from .frequencies import FrequencyVector, PerturbationSeries, QMode

__all__ = ["BudgetError", "ConfigError", "FrequencyVector", "NonConvergenceError",
           "PerturbationSeries", "QMode", "RefusalError", "ResolutionError",
           "SmallDivisorError", "SplitlabError", "__version__"]
