"""Multiscale planning for linearly solvable stochastic control.

Sampled states and a locally consistent Markov chain approximate a
control-affine SDE; a diffusion wavelet tree compresses the chain, the
desirability eigenproblem is solved coarse-to-fine on that tree, refined
locally around the current state, and tracked with a receding-horizon
minimum-energy controller.
"""
from .errors import (ConfigError, DependencyError, NumericalError, PlannerError)

__version__ = "0.1.0"
__all__ = ["ConfigError", "DependencyError", "NumericalError", "PlannerError", "__version__"]
