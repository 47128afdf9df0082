"""Joint Bayesian inference of ODE parameters and discretization-error scales.

The Euler solution of an ODE is treated as uncertain: a Gaussian error with
componentwise standard deviations ``sigma`` sits between it and the
observations, and ``sigma`` follows a Markov prior driven by local-error
estimates, ``sigma <- m*sigma + |L|`` with ``m ~ Gamma(alpha, beta)``.
A particle filter then yields smoothed posteriors of ``sigma`` and,
optionally, of the ODE parameters.
"""

from .error_prior import GammaMultiplierPrior, InitialSigmaPrior, rate_check
from .errors import (ConfigError, DiscvarError, FilterCollapseError, IntegrationError, InvalidParameterError,
                     ModelError, SearchError)
from .hyperparam_search import GridSpec, RunSpec, search
from .joint_inference import Normal, ParamPrior, PointMass, TruncatedNormal, run_joint_filter
from .models import FITZHUGH_NAGUMO, LINEAR_TEST, PENDULUM, get_system
from .observation import ObservationOperator, ObservationSet, exact_errors, generate_observations, log_likelihood
from .ode_core import OdeSystem, SolverGrid, euler_step, reference_solution, runge_step
from .particle_engine import FilterConfig, credible_band, run_filter, sigma_summary

__version__ = "0.1.0"

__all__ = [
    "GammaMultiplierPrior", "InitialSigmaPrior", "rate_check",
    "ConfigError", "DiscvarError", "FilterCollapseError", "IntegrationError", "InvalidParameterError",
    "ModelError", "SearchError",
    "GridSpec", "RunSpec", "search",
    "Normal", "ParamPrior", "PointMass", "TruncatedNormal", "run_joint_filter",
    "FITZHUGH_NAGUMO", "LINEAR_TEST", "PENDULUM", "get_system",
    "ObservationOperator", "ObservationSet", "exact_errors", "generate_observations", "log_likelihood",
    "OdeSystem", "SolverGrid", "euler_step", "reference_solution", "runge_step",
    "FilterConfig", "credible_band", "run_filter", "sigma_summary",
]
