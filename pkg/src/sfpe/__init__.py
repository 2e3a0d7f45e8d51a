"""Monte-Carlo solvers for semilinear Kolmogorov PDEs through their
stochastic fixed-point representation with Bismut-Elworthy-Li weights."""

__version__ = "0.1.0"

from .errors import (BudgetExceeded, ConfigurationError, EllipticityViolation, HorizonError,
                     SfpeError, SimulationBlowup)
from .estimators import (Estimate, estimate_gradient_bel, estimate_value,
                         estimate_value_gradient)
from .picard import (PicardConfig, ValueGradient, fixed_point_residual, mlp_evaluate,
                     picard_evaluate, predicted_cost, solve, terminal_value)
from .presets import PRESET_NAMES, get_preset
from .problem import (CoefficientField, LyapunovVq, ProblemSpec, check_ellipticity,
                      check_lipschitz_f, check_lyapunov_vq, check_monotonicity,
                      lyapunov_rho_bound, manufactured_problem)
from .rng import RngStream
from .sde import (TimeGrid, malliavin_derivative, sample_brownian, simulate_first_variation,
                  simulate_inverse_variation, simulate_path)
from .verification import (convergence_study, gradient_crosscheck, moment_certificates,
                           pde_residual, verification_suite)
from .weights import bel_weight, moment_bound, weight_moment_report

__all__ = [
    "BudgetExceeded", "ConfigurationError", "EllipticityViolation", "HorizonError",
    "SfpeError", "SimulationBlowup", "Estimate", "estimate_gradient_bel", "estimate_value",
    "estimate_value_gradient", "PicardConfig", "ValueGradient", "fixed_point_residual",
    "mlp_evaluate", "picard_evaluate", "predicted_cost", "solve", "terminal_value",
    "PRESET_NAMES", "get_preset", "CoefficientField", "LyapunovVq", "ProblemSpec",
    "check_ellipticity", "check_lipschitz_f", "check_lyapunov_vq", "check_monotonicity",
    "lyapunov_rho_bound", "manufactured_problem", "RngStream", "TimeGrid",
    "malliavin_derivative", "sample_brownian", "simulate_first_variation",
    "simulate_inverse_variation", "simulate_path", "convergence_study",
    "gradient_crosscheck", "moment_certificates", "pde_residual", "verification_suite",
    "bel_weight", "moment_bound", "weight_moment_report",
]
