"""Regularizing trust-region and Levenberg-Marquardt solvers for ill-posed
nonlinear square systems, with first-kind integral-equation benchmarks."""

from .core import (
    ConfigError, EvalPoint, EvaluationError, NonlinearSystem, RegtrError,
    discrepancy_met, evaluate_point, fd_jacobian, zero_noise_atol,
)
from .fredholm import (
    DEFAULT_GUESSES, ErrorMetrics, FredholmProblem, PROBLEM_IDS, build_problem,
    canonical_selector, error_metrics, initial_guess, nearest_truth, noise_sweep,
)
from .solvers import (
    IterationRecord, Method, SolveReport, SolverConfig, Status, compute_rho, solve,
)
from .subproblem import (
    DiagnosticsUnavailableError, NotPositiveDefiniteError, QTargetUnreachableError,
    SecularSolveError, ShiftedSolve, StationaryPointError, SvdDiagnostics,
    ZeroResidualError, lm_secular_newton, psi_and_derivative, q_ratio,
    solve_shifted, svd_diagnostics, tr_secular_newton,
)

__version__ = "0.1.0"
