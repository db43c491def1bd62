"""Adversarial-input detection by minimum-variance randomized sampling."""

__version__ = "0.1.0"

from .attacks import AttackConfig, bim, fgsm, mim
from .metrics import decide, entropy, mutual_information, variance_trace
from .nn import Network, forward_full, grad_input, softmax, train_sgd
from .sampling import SamplingConfig, build_plan, mc_forward_dynamic, mc_forward_fixed
from .solvers import SolverInput, bernoulli_params, solve_exact, solve_linear, solve_log

__all__ = [
    "AttackConfig",
    "Network",
    "SamplingConfig",
    "SolverInput",
    "bernoulli_params",
    "bim",
    "build_plan",
    "decide",
    "entropy",
    "fgsm",
    "forward_full",
    "grad_input",
    "mc_forward_dynamic",
    "mc_forward_fixed",
    "mim",
    "mutual_information",
    "softmax",
    "solve_exact",
    "solve_linear",
    "solve_log",
    "train_sgd",
    "variance_trace",
]
