"""Sparse ReLU networks that approximate Hölder functions on embedded manifolds."""

from .analysis import ArchSpec, RateReport, covering_log_bound, fit_loglog, rate_balance, theorem_arch
from .assembler import Assembly, ErrorBudget, assemble, error_budget, theoretical_size, verify_size
from .atlas import Atlas, Chart, build_atlas, partition_weights, project_chart
from .exceptions import (BudgetInfeasibleError, CoverageError, DomainError, GeometryError, InputShapeError,
                         ManifoldReluError, NumericOverflowError, PreconditionError, ReachViolationError,
                         ResourceError)
from .gadgets import (IndicatorSpec, build_abs, build_clip, build_mult, build_sq_dist, build_square,
                      build_step_indicator, build_trapezoid)
from .harness import ErrorReport, RegressRow, emit_csv, regression_experiment, scaling_study, sup_error
from .manifolds import Manifold, load_manifold_spec, sample_points
from .network import (NetworkMeta, ReluNetwork, SparseLayer, compose_serial, eval_network, from_affine,
                      identity_network, load_network, measure_meta, pad_to_depth, save_network, stack_parallel)
from .targets import TargetFunction, make_target
from .taylor import TaylorModel, build_taylor_net, eval_taylor_model, grid_resolution, taylor_coefficients

__version__ = "0.1.0"
