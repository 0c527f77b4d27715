"""Asynchronous SGD, its stochastic modified equations, moment analysis and
optimal mini-batch scheduling."""

__version__ = "0.1.0"

from .control import ControlProblem, gamma_star, plan_batches, t_star, u_star, value_function
from .discrete import DivergenceError, RunConfig, StalenessModel, asgd_run, msgd_run
from .ensemble import SimSpec, run_ensemble, weak_error
from .moments import build_moment_system, lambda_plus, mu_opt, stationary_moments
from .objectives import builtin_objective
from .sme import IntegratorConfig, integrate

__all__ = [
    "ControlProblem", "DivergenceError", "IntegratorConfig", "RunConfig", "SimSpec",
    "StalenessModel", "asgd_run", "build_moment_system", "builtin_objective", "gamma_star",
    "integrate", "lambda_plus", "msgd_run", "mu_opt", "plan_batches", "run_ensemble",
    "stationary_moments", "t_star", "u_star", "value_function", "weak_error",
]
