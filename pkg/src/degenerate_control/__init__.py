"""Null controls and Carleman-weight diagnostics for 1D parabolic equations
whose diffusion coefficient vanishes on an interval."""

from .carleman import (CarlemanParams, build_weights, carleman_lhs, carleman_rhs,
                       observability_quotient, ratio_study, z_transform_identity)
from .hum import eps_sweep, gramian_apply, hum_solve, j_eps_gradient, j_eps_value
from .mesh import Grid, build_grid, h1a_seminorm, l2_norm, spacetime_inner
from .profile import (DiffusionProfile, evaluate, make_constant_profile, make_power_profile,
                      validate_hypotheses)
from .solver import (ControlProblem, Potential, duality_check, energy_check, solve_adjoint,
                     solve_forward)

__version__ = "0.1.0"

__all__ = [
    "CarlemanParams", "ControlProblem", "DiffusionProfile", "Grid", "Potential",
    "build_grid", "build_weights", "carleman_lhs", "carleman_rhs", "duality_check",
    "energy_check", "eps_sweep", "evaluate", "gramian_apply", "h1a_seminorm", "hum_solve",
    "j_eps_gradient", "j_eps_value", "l2_norm", "make_constant_profile", "make_power_profile",
    "observability_quotient", "ratio_study", "solve_adjoint", "solve_forward",
    "spacetime_inner", "validate_hypotheses", "z_transform_identity",
]
