"""Simulation and convergence checks for graphon particle systems."""

from .graphon import Graphon, StepGraphon, discretize, evaluate_step, infty_to_one_diff, make_graphon
from .meanfield import GridMeanField, MeanFieldConfig, node_marginal, picard_solve, sample_mixture
from .model import CoefficientModel, global_minimizer, make_model, probe_assumptions, sgd_model
from .simulator import (
    IntegrationDiverged,
    ParticleEnsemble,
    SimConfig,
    em_step,
    interpolate,
    refine_coupled,
    simulate,
)
from .transport import (
    EmpiricalMeasure,
    EmpiricalPathMeasure,
    brute_force_ot,
    mean_w1_estimate,
    sup_norm_dist,
    wasserstein_p,
    wasserstein_path,
)

__version__ = "0.1.0"
