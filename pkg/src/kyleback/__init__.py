"""Solver for a continuous-time insider-trading equilibrium with an
exponentially risk-averse informed trader.

The pipeline: a monotone-transport fixed point determines the terminal
pricing map, a backward quasilinear PDE system produces the price, state and
value surfaces, and a Monte-Carlo engine simulates the unconditioned state
and the insider's bridge for statistical validation.
"""

from .beliefs import (BeliefDistribution, belief_from_config, gaussian_belief,
                      slope_budget, tabulated_belief,
                      truncated_lognormal_belief, uniform_belief)
from .equilibrium import (ConditionalValueDistribution, EquilibriumReport,
                          conditional_value_cdf, convex_dual, expected_utility,
                          gaussian_benchmark, impact_and_depth, impact_kernel,
                          insider_drift, transition_density)
from .errors import (AssemblyError, BudgetError, ConvergenceError,
                     ConvexityError, DegenerateDistributionError,
                     GridCoverageError, GridExitError, KyleBackError,
                     MissingArtifactError, SingularDriftError, StabilityError)
from .fixed_point import (FixedPointResult, Representation, TerminalDensity,
                          brenier_update, params_for_belief, picard_solve,
                          solve_representation, terminal_density)
from .pde import (ModelParams, PricingSurface, RSolution, assemble_surfaces,
                  check_system_residual, martingale_generator_residual,
                  refined_time_grid, solve_R)
from .potential import (ConvexPotential, linear_potential, load_potential_csv,
                        save_potential_csv, uniform_grid, zero_potential)
from .simulate import (BatchConfig, SimulationBatch, ks_distance,
                       martingale_check, recover_xi_from_flow, simulate_bridge,
                       simulate_xi0, wealth_decomposition)

__version__ = "0.1.0"

__all__ = [
    "AssemblyError", "BatchConfig", "BeliefDistribution", "BudgetError",
    "ConditionalValueDistribution", "ConvergenceError", "ConvexPotential",
    "ConvexityError", "DegenerateDistributionError", "EquilibriumReport",
    "FixedPointResult", "GridCoverageError", "GridExitError", "KyleBackError",
    "MissingArtifactError", "ModelParams", "PricingSurface", "RSolution",
    "Representation", "SimulationBatch", "SingularDriftError",
    "StabilityError", "TerminalDensity", "assemble_surfaces",
    "belief_from_config", "brenier_update", "check_system_residual",
    "conditional_value_cdf", "convex_dual", "expected_utility",
    "gaussian_belief", "gaussian_benchmark", "impact_and_depth",
    "impact_kernel", "insider_drift", "ks_distance", "linear_potential",
    "load_potential_csv", "martingale_check", "martingale_generator_residual",
    "params_for_belief", "picard_solve", "recover_xi_from_flow",
    "refined_time_grid", "save_potential_csv", "simulate_bridge",
    "simulate_xi0", "slope_budget", "solve_R", "solve_representation",
    "tabulated_belief", "terminal_density", "transition_density",
    "truncated_lognormal_belief", "uniform_belief", "uniform_grid",
    "wealth_decomposition", "zero_potential",
]
