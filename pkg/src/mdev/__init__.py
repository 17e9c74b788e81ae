"""Euler-Maruyama ergodic averages, Stein solutions and moderate-deviation diagnostics."""

__version__ = "0.1.0"

from .models import Model, make_linear_model, make_tanh_model, solve_lyapunov  # noqa: E402
from .integrator import DivergenceError, Trajectory, em_step, simulate, simulate_batch  # noqa: E402
from .stein import (CertificationError, SteinError, SteinSolution, certify,  # noqa: E402
                    stein_1d_quadrature, stein_linear_h, stein_quadratic_h)
from .stats import compute_W_S, decompose  # noqa: E402
from .bounds import cmd_envelope, lm21_bound, normal_tail  # noqa: E402

__all__ = [
    "__version__", "Model", "make_linear_model", "make_tanh_model", "solve_lyapunov",
    "DivergenceError", "Trajectory", "em_step", "simulate", "simulate_batch",
    "CertificationError", "SteinError", "SteinSolution", "certify", "stein_1d_quadrature",
    "stein_linear_h", "stein_quadratic_h", "compute_W_S", "decompose",
    "cmd_envelope", "lm21_bound", "normal_tail",
]
