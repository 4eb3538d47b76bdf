"""Potts spin glass free energy: finite-size simulation, the matrix-path
variational functional, and replica-structure diagnostics."""

from .cascade import (
    CascadeSample,
    CascadeSpec,
    OverlapArray,
    coincidence_masses,
    sample_cascade,
    sample_overlap_array,
    verify_y_identity,
)
from .core import (
    GramMatrix,
    GramViolation,
    LagrangeMultipliers,
    MonotonePath,
    StateDistribution,
    discretization_bound,
    discretize_path,
    lift_reduced,
    path_delta,
    round_distribution,
    validate_gram,
)
from .diagnostics import (
    SyncFit,
    gg_polynomial_extension_check,
    gg_residual,
    interpolation_curve,
    legendre_gap,
    sync_fit,
)
from .functional import (
    EvalResult,
    QuadratureSpec,
    eval_f1_restricted,
    eval_f2,
    eval_lower_bound,
    eval_parisi,
    eval_phi,
    eval_phi_cascade_mc,
    increment_covariance,
)
from .model import (
    Configuration,
    DisorderInstance,
    OverlapMatrix,
    PerturbationHamiltonian,
    PerturbationSpec,
    ass_covariance_check,
    enumerate_free_energy,
    gibbs_replicas,
    hamiltonian,
    mcmc_free_energy,
    overlap,
    perturbation_covariance,
    perturbation_scale,
)
from .optimize import (
    OptimizerReport,
    PathParametrization,
    inner_minimize,
    outer_maximize,
    simplex_grid,
)
from .util import BudgetError, ValidationError

__version__ = "0.1.0"
