"""Constrained linear-quadratic mixed mean-field games.

Library for solving the consistency system of a major/minor mean-field game
with convex control constraints, checking its well-posedness conditions, and
measuring finite-population convergence and approximate-equilibrium
properties.
"""

__version__ = "0.1.0"

from .convex import (
    Box,
    FullSpace,
    HalfspaceCone,
    LinearSubspace,
    NonnegativeOrthant,
    WeightedMetric,
    control_map,
    project,
    variational_residual,
)
from .model import (
    ModelSpec,
    PopulationAssignment,
    StackedSystem,
    assign_population,
    build_stacked,
    operator_constants,
    validate_spec,
)
from .paths import NoiseEnsemble, TimeGrid, conditional_mean, phi_field, sample_ensemble
from .solver import (
    CCIterate,
    CCSolution,
    PicardReport,
    backward_pass,
    decentralized_strategy,
    forward_pass,
    hamiltonian_residual,
    picard_solve,
)
from .wellposed import check_A4, check_global, empirical_contraction, local_horizon_bound
from .nashlab import (
    NashReport,
    RealizedRun,
    cost_gap_study,
    major_perturbation,
    minor_perturbation,
    rate_fit,
    simulate_realized,
    state_average_gap,
)
