"""Numerical laboratory for coupled forward-backward SDEs with scalar forward state.

Capabilities: well-posedness condition checking (sampled key inequality plus
three sufficient conditions), short-horizon solves by backward induction
with Gauss-Hermite quadrature, arbitrary-horizon solves by partitioning,
Lipschitz-propagation tracking, Monte Carlo forward assembly, and
experiment harnesses for convergence, stability and Lipschitz studies.
"""

from .conditions import (
    ConditionReport,
    SamplePlan,
    check_key_condition,
    cubic_drift,
    derivative_point,
    lipschitz_schedule,
    margin_at,
    propagated_lipschitz,
    quartic_drift,
    schedule_by_node,
    sufficient_decoupled,
    sufficient_scalar,
    sufficient_spectral,
    worst_direction_margin,
)
from .core import (
    CoefficientSet,
    DerivativePoint,
    DerivativeSet,
    DimensionMismatchError,
    Dimensions,
    FbsdeError,
    GridFunction,
    InitialState,
    NoContractionError,
    NonFiniteError,
    PathBundle,
    PathEscapeError,
    ProblemSpec,
    ValidationReport,
    initial_data_norm_sq,
    lipschitz_estimate,
    solution_norm_sq,
    validate_problem,
)
from .experiments import (
    convergence_study,
    lipschitz_report,
    perturbed_spec,
    stability_sweep,
)
from .horizon import (
    GlobalSolution,
    LipschitzExplosionError,
    fit_growth_rate,
    forward_assemble,
    initial_value_map,
    solve,
    wellposedness_certificate,
)
from .problems import (
    NoAnalyticFormError,
    OracleEntry,
    UnknownProblemError,
    analytic_eval,
    brute_force_reference,
    get_problem,
    list_problems,
    problem_names,
)
from .segment import (
    DiscretizationParams,
    SegmentSolution,
    backward_sweep,
    estimate_delta0,
    gauss_hermite_increments,
    solve_one_step,
)

__version__ = "0.1.0"
