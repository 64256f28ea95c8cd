"""Numerical laboratory for ellipsoid random walks, their dynamic programming
principle and orthogonal couplings."""
from ._accel import backend, set_backend, set_threads
from .comparison import (
    ComparisonConstants,
    build_constants,
    f1,
    f2,
    f2_average_lower_bound_check,
    f1_step_bound_check,
    key_inequality_coupling,
    log_f2,
    verify_key_inequality,
)
from .counterexamples import (
    CustomCouplingMap,
    LinearCouplingMap,
    counterexample_2d,
    counterexample_3d,
    halfslab_volume_fraction,
    projection_split,
)
from .coupling import (
    CouplingResult,
    WeightMatrix,
    continuity_margin,
    medium_distance_coupling,
    min_trace_bound,
    mirror_coupling,
    optimal_coupling,
    tau,
    thresholds,
    trace_objective,
)
from .dpp import GridSolution, holder_estimate, mean_value_residual, solve_dpp
from .errors import (
    ConfigError,
    ConvergenceError,
    DistortionError,
    DomainError,
    EllipsoidLabError,
    ValidationError,
)
from .field import (
    Ball,
    Box,
    CheckerboardField,
    CoefficientField,
    ConstantField,
    CustomField,
    Ellipsoid,
    RotatingField,
    overlap_fraction,
    sample_uniform,
)
from .matcore import (
    EllipticityClass,
    eig_sym,
    in_class,
    polar_orthogonal,
    principal_sqrt,
    random_orthogonal,
)
from .quadrature import ball_quadrature
from .walks import coupled_walk, coupled_walks, exit_estimate, walk

__version__ = "0.1.0"
