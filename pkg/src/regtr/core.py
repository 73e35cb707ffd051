"""Problem abstraction and residual machinery for square nonlinear systems.

A problem is a square system ``F(x) = y`` known only through noisy data
``y_delta`` with ``||y - y_delta|| <= delta``-style noise level.  Solvers work
on :class:`EvalPoint` snapshots that bundle the residual ``F(x) - y_delta``,
the Jacobian, the Gauss-Newton matrix ``B = J^T J`` and the gradient
``g = J^T (F(x) - y_delta)`` of ``phi(x) = 0.5 ||F(x) - y_delta||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

EPS = float(np.finfo(float).eps)
SQRT_EPS = float(np.sqrt(np.finfo(float).eps))


class RegtrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RegtrError):
    """Invalid configuration value or unknown selector."""


class EvaluationError(RegtrError):
    """F(x) produced a non-finite value.  Carries the offending point."""

    def __init__(self, message: str, x: Optional[Array] = None):
        super().__init__(message)
        self.x = None if x is None else np.array(x, dtype=float)


def _freeze(a: Array) -> Array:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NonlinearSystem:
    """A square nonlinear system F(x) = y_delta with known noise level.

    Parameters
    ----------
    n : int
        Dimension of both the unknown and the data.
    evaluate : callable
        Maps x in R^n to F(x) in R^n.  Must be deterministic and re-entrant.
    y_delta : array
        The (possibly noisy) data vector.
    noise_level : float
        Nonnegative noise level ``delta`` used by the discrepancy principle.
    exact_data : array, optional
        Noise-free data, when known (synthetic benchmarks).
    jacobian : callable, optional
        Maps x to the n-by-n Jacobian of F.  When absent, solvers fall back
        to :func:`fd_jacobian`.
    """

    n: int
    evaluate: Callable[[Array], Array]
    y_delta: Array
    noise_level: float
    exact_data: Optional[Array] = None
    jacobian: Optional[Callable[[Array], Array]] = None

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigError(f"dimension must be positive, got {self.n}")
        if self.noise_level < 0:
            raise ConfigError(f"noise level must be nonnegative, got {self.noise_level}")
        y = _freeze(self.y_delta)
        if y.shape != (self.n,):
            raise ConfigError(f"y_delta has shape {y.shape}, expected ({self.n},)")
        object.__setattr__(self, "y_delta", y)
        if self.exact_data is not None:
            ye = _freeze(self.exact_data)
            if ye.shape != (self.n,):
                raise ConfigError(f"exact_data has shape {ye.shape}, expected ({self.n},)")
            object.__setattr__(self, "exact_data", ye)

    def residual_norm(self, F_x: Array) -> float:
        return float(np.linalg.norm(F_x - self.y_delta))


@dataclass(frozen=True)
class EvalPoint:
    """Everything the solvers need at one iterate, evaluated once.

    ``B`` is stored exactly symmetric (upper triangle mirrored) and ``g`` is
    computed from the stored residual, so residual, gradient and ``phi``
    remain mutually consistent.
    """

    x: Array
    F_minus_y: Array
    J: Array
    B: Array
    g: Array
    phi: float

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def resnorm(self) -> float:
        """Euclidean norm of the residual F(x) - y_delta."""
        return float(np.linalg.norm(self.F_minus_y))


def _checked_eval(sys: NonlinearSystem, x: Array) -> Array:
    F = np.asarray(sys.evaluate(x), dtype=float)
    if F.shape != (sys.n,):
        raise ConfigError(f"evaluate returned shape {F.shape}, expected ({sys.n},)")
    if not np.all(np.isfinite(F)):
        raise EvaluationError("F(x) is not finite", x)
    return F


def fd_jacobian(sys: NonlinearSystem, x: Array, F_x: Array) -> Array:
    """Forward-difference Jacobian of F at x, given F_x = F(x).

    Column j uses the step ``h_j = sqrt(eps) * max(|x_j|, 1)`` carrying the
    sign of ``x_j`` (positive when ``x_j = 0``).
    """
    x = np.asarray(x, dtype=float)
    n = sys.n
    J = np.empty((n, n))
    for j in range(n):
        sign = 1.0 if x[j] >= 0.0 else -1.0
        h = SQRT_EPS * max(abs(x[j]), 1.0) * sign
        xp = x.copy()
        xp[j] += h
        J[:, j] = (_checked_eval(sys, xp) - F_x) / h
    return J


def evaluate_point(sys: NonlinearSystem, x: Array) -> EvalPoint:
    """Evaluate residual, Jacobian, B = J^T J, gradient and phi at x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise ConfigError(f"x has shape {x.shape}, expected ({sys.n},)")
    if not np.all(np.isfinite(x)):
        raise EvaluationError("x is not finite", x)
    F = _checked_eval(sys, x)
    if sys.jacobian is not None:
        J = np.asarray(sys.jacobian(x), dtype=float)
        if J.shape != (sys.n, sys.n):
            raise ConfigError(f"jacobian returned shape {J.shape}, expected square")
        if not np.all(np.isfinite(J)):
            raise EvaluationError("J(x) is not finite", x)
    else:
        J = fd_jacobian(sys, x, F)
    r = F - sys.y_delta
    M = J.T @ J
    # mirror the upper triangle so B == B.T holds bitwise
    B = np.triu(M) + np.triu(M, 1).T
    g = J.T @ r
    phi = 0.5 * float(r @ r)
    return EvalPoint(
        x=_freeze(x), F_minus_y=_freeze(r), J=_freeze(J), B=_freeze(B),
        g=_freeze(g), phi=phi,
    )


def zero_noise_atol(y_delta: Array) -> float:
    """Residual floor used by the stopping test for exact-data runs."""
    return 1e-12 * (1.0 + float(np.linalg.norm(y_delta)))


def discrepancy_met(point: EvalPoint, delta: float, tau: float, atol: float = 0.0) -> bool:
    """Discrepancy principle: stop once ||F(x) - y_delta|| <= tau * delta.

    The comparison is inclusive.  For exact data (delta = 0) the caller
    supplies a small absolute floor ``atol`` (see :func:`zero_noise_atol`),
    since an iteration on exact data would otherwise never stop.
    """
    if tau <= 1.0:
        raise ConfigError(f"tau must exceed 1, got {tau}")
    if delta < 0.0:
        raise ConfigError(f"delta must be nonnegative, got {delta}")
    return point.resnorm <= max(tau * delta, atol)
