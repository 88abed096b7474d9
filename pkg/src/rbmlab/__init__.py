"""Simulation lab for reflected Brownian particles in the orthant that interact
through their boundary local times."""

__version__ = "0.1.0"

from .paths import (BrownianEnsemble, Path, TimeGrid, make_grid, mean_all, mean_exclude,
                    modulus, sample_brownian, sup_norm)
from .laws import InitialLaw
from .skorohod import complementarity_residual, reflect_1d
from .srbm import (ContractionNotApplicable, NonConvergence, ReflectionSpec, SolverError,
                   SrbmSolution, StabilityError, homogeneous_matrix, is_completely_s,
                   penalty_fn, simulate_particle_system, solve_srbm_contraction,
                   solve_srbm_penalty, spectral_radius_abs)
from .mckean_vlasov import MvSolution, analytic_rbm_marginal, solve_nlr, solve_nlr_penalized
from .environment import (EnvironmentDraw, annealed_replicates, coupled_run,
                          quenched_replicates, reflection_to_routing, routing_to_reflection,
                          sample_environment)
from .stats import (EmpiricalMeasure, chaos_gap, empirical_measure, mean_boundary,
                    pathwise_bound_check, wasserstein1_1d)
