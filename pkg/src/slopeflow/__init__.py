"""Near-steepest descent curves, subdifferentials, and min-norm subgradient
flows for piecewise-smooth semi-algebraic functions."""

from .descent import (
    DescentRun,
    DescentResult,
    ConvergenceReport,
    ErrorBoundCertificate,
    ProjectionError,
    build_descent_polyline,
    ekeland_point,
    error_bound_certificate,
    project_sublevel,
    refine_until_cauchy,
)
from .flow import FlowConfig, FlowResult, flow_descent_identity, integrate_min_norm_flow
from .func_model import (
    FuncExpr,
    ParseError,
    SmoothPiece,
    active_pieces,
    eval_expr,
    format_expr,
    parse_expr,
    piece_gradient,
)
from .geometry import (
    SampledCurve,
    SlopeFloorError,
    arclength_reparam,
    curve_length,
    metric_derivative,
    read_curve_csv,
    slope_time_inverse,
    slope_time_reparam,
    write_curve_csv,
)
from .harness import CORPUS, ExperimentConfig, corpus, run_experiment
from .subdiff import (
    SlopeValue,
    SubdiffSet,
    clarke_subdiff,
    frechet_subdiff,
    is_lower_critical,
    limiting_slope,
    limiting_subdiff,
    min_norm_point,
    sampled_slope,
    wolfe_min_norm,
)
from .verify import (
    VerifyReport,
    check_chain_rule,
    check_near_max_slope,
    check_near_steepest,
    check_steepest,
    check_sublevel_normal,
    compare_curves,
    kl_length_report,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
