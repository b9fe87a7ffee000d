"""Single-loop variance-reduced solvers for stochastic optimization with equality constraints."""

from .errors import (
    ConfigurationError,
    DegenerateMatrixError,
    GenerationError,
    InputError,
    InvariantViolation,
    ParameterError,
    PreconditionError,
)
from .estimator import BundleSampler, EstimatorState, SampleBundle, penalty_grad_exact, penalty_grad_sample, storm_update
from .harness import ExperimentConfig, fit_power_law, fit_rate, read_trace, run_experiment
from .metrics import (
    QP_IMPLIED,
    potential_case1,
    potential_case3,
    stationarity,
    tracking_error,
)
from .model import (
    AssumptionConstants,
    Ball,
    Box,
    DetConstraints,
    FullSpace,
    LinearConstraints,
    NonnegativeOrthant,
    ObjectiveOracle,
    ProblemSpec,
    StochConstraints,
    delta_of,
    normal_cone_distance,
    project,
)
from .problems import (
    BUILTINS,
    estimate_constants,
    make_builtin,
    make_sharing,
    make_sphere,
    make_stoch_sphere,
    problem_from_dict,
    problem_to_dict,
)
from .schedules import (
    Case1Schedule,
    Case2DetSchedule,
    Case3Schedule,
    DualSchedule,
    FixedSchedule,
    l_tilde,
    validate_case1,
)
from .solvers import TRACE_FIELDS, RunConfig, RunReport, run, select_output

__version__ = "0.1.0"

__all__ = [
    "AssumptionConstants",
    "BUILTINS",
    "Ball",
    "Box",
    "BundleSampler",
    "Case1Schedule",
    "Case2DetSchedule",
    "Case3Schedule",
    "ConfigurationError",
    "DegenerateMatrixError",
    "DetConstraints",
    "DualSchedule",
    "EstimatorState",
    "ExperimentConfig",
    "FixedSchedule",
    "FullSpace",
    "GenerationError",
    "InputError",
    "InvariantViolation",
    "LinearConstraints",
    "NonnegativeOrthant",
    "ObjectiveOracle",
    "ParameterError",
    "PreconditionError",
    "ProblemSpec",
    "QP_IMPLIED",
    "RunConfig",
    "RunReport",
    "SampleBundle",
    "StochConstraints",
    "TRACE_FIELDS",
    "delta_of",
    "estimate_constants",
    "fit_power_law",
    "fit_rate",
    "l_tilde",
    "make_builtin",
    "make_sharing",
    "make_sphere",
    "make_stoch_sphere",
    "normal_cone_distance",
    "penalty_grad_exact",
    "penalty_grad_sample",
    "potential_case1",
    "potential_case3",
    "problem_from_dict",
    "problem_to_dict",
    "project",
    "read_trace",
    "run",
    "run_experiment",
    "select_output",
    "stationarity",
    "storm_update",
    "tracking_error",
    "validate_case1",
]
