"""Branched-transport irrigation plans coupled to a semilinear harvest PDE.

The package plans cheap root networks for discrete measures under the
concave flux cost sum(flux**alpha * length), solves the associated harvest
equation and its adjoint on a rectangle, and runs gradient ascent on atom
masses toward measures satisfying first-order optimality.
"""

from .core import (Atom, DiscreteMeasure, Domain, Grid, GrowthFunction,
                   RunConfig, SolverError, ValidationError, mass_bound_check,
                   mass_outside, total_mass)
from .elliptic import (NodalMeasure, ScalarField, bilinear_interpolate,
                       growth_bound_lambda, harvest, laplacian_matrix,
                       lump_measure, perturbation_derivative, phi_field,
                       quadrature_weights, solve_adjoint, solve_linear,
                       solve_state)
from .irrigation import (ROOT, STEINER, TERMINAL, ArcChordReport, FluxMap,
                         HolderReport, IrrigationTree, LandscapeValues,
                         brute_force_plan, check_arc_chord,
                         check_landscape_holder, compute_fluxes,
                         cost_lower_bound, irrigation_cost, landscape,
                         marginal_cost_at_node, optimize_plan,
                         scaled_mass_cost, star_tree)
from .optimality import (AtomRecord, OptimalityReport, OptimizationTrace,
                         PathCheckReport, SupportDensityReport, TraceStep,
                         ascend_measure, optimality_residual,
                         path_inequality_check, payoff,
                         support_density_report)

__version__ = "0.1.0"

__all__ = [
    "Atom",
    "DiscreteMeasure",
    "Domain",
    "Grid",
    "GrowthFunction",
    "RunConfig",
    "SolverError",
    "ValidationError",
    "mass_bound_check",
    "mass_outside",
    "total_mass",
    "NodalMeasure",
    "ScalarField",
    "bilinear_interpolate",
    "growth_bound_lambda",
    "harvest",
    "laplacian_matrix",
    "lump_measure",
    "perturbation_derivative",
    "phi_field",
    "quadrature_weights",
    "solve_adjoint",
    "solve_linear",
    "solve_state",
    "ROOT",
    "STEINER",
    "TERMINAL",
    "ArcChordReport",
    "FluxMap",
    "HolderReport",
    "IrrigationTree",
    "LandscapeValues",
    "brute_force_plan",
    "check_arc_chord",
    "check_landscape_holder",
    "compute_fluxes",
    "cost_lower_bound",
    "irrigation_cost",
    "landscape",
    "marginal_cost_at_node",
    "optimize_plan",
    "scaled_mass_cost",
    "star_tree",
    "AtomRecord",
    "OptimalityReport",
    "OptimizationTrace",
    "PathCheckReport",
    "SupportDensityReport",
    "TraceStep",
    "ascend_measure",
    "optimality_residual",
    "path_inequality_check",
    "payoff",
    "support_density_report",
    "__version__",
]
