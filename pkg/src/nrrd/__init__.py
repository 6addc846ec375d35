"""Finite-difference solver for a neutron-density / temperature reaction-diffusion system.

    d_t u1 - Delta u1 = u1 u2 - b u1,   d_nu u1 + alpha u1 = 0
    d_t u2 - Delta u2 = a u1,           d_nu u2 + beta |u2|^(gamma-2) u2 = 0
"""
from .core import (
    ConvergenceError,
    DivergenceError,
    DomainError,
    FormatError,
    Grid,
    GridMismatchError,
    NRRDError,
    Params,
    SolvabilityError,
    SolverOptions,
    StateError,
    StatePair,
    StepError,
    gradient,
    h1_seminorm,
    integrate_boundary,
    integrate_interior,
    l2_norm,
    linf_norm,
)
from .elliptic import (
    newton_nonlinear_bc,
    psi_map,
    solve_linear_robin,
    solve_poisson_nonlinear_bc,
)
from .evolve import (
    ComparisonReport,
    RunOutcome,
    TimeSeries,
    apply_cutoff,
    comparison_check,
    evolve,
    evolve_lockstep,
    step,
)
from .experiments import (
    SweepRow,
    ThresholdReport,
    choose_epsilon,
    dichotomy_violations,
    run_threshold_part1,
    run_threshold_part2,
    sweep,
)
from .functionals import (
    NEG_INF,
    BracketParams,
    bracket_infimum,
    neutron_balance_residual,
    temperature_balance_residual,
    weighted_boundary,
    weighted_mass,
)
from .spectral import EigenPair, hopf_floor, robin_eigenpair
from .steady import (
    SteadyResult,
    UniquenessReport,
    find_positive_steady,
    ordered_uniqueness_check,
    refine_steady,
    steady_residual,
)

__version__ = "0.1.0"
