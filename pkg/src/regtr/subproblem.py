"""Shifted-system steps and the two secular equations that select lambda.

Every step considered by the outer iterations has the form
``(B + lambda I) p = -g`` for some ``lambda >= 0``.  This module solves that
system by Cholesky factorization and provides Newton root-finders for the two
scalar equations that pick ``lambda``:

* trust region: ``1/||p(lambda)|| - 1/Delta = 0`` (step on the boundary),
* damped Gauss-Newton: ``||r + J p(lambda)|| = q ||r||`` for a fixed ratio
  ``q in (0, 1)``, solved through the reformulation
  ``psi(lambda) = lambda/||r + J p(lambda)|| - lambda/(q ||r||)``,
  which is concave and strictly decreasing past the root, so Newton started
  from the overestimate ``q/(1-q) ||B||`` converges monotonically.

An SVD-based view of the same quantities (:func:`svd_diagnostics`) serves as
an independent cross-check: with ``J = U S V^T`` and ``r~ = U^T r``,

    ||p(lambda)||^2      = sum_{i<=rank} s_i^2 r~_i^2 / (s_i^2 + lambda)^2
    ||r + J p(lambda)||^2 = sum_{i<=rank} lambda^2 r~_i^2 / (s_i^2 + lambda)^2
                            + sum_{i>rank} r~_i^2
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from .core import Array, EPS, SQRT_EPS, EvalPoint, RegtrError, _freeze


class StationaryPointError(RegtrError):
    """The gradient vanishes; no descent step exists."""


class ZeroResidualError(RegtrError):
    """The residual is zero; the iterate already solves the system."""


class NotPositiveDefiniteError(RegtrError):
    """Cholesky factorization of B + lambda I broke down."""

    def __init__(self, lam: float):
        super().__init__(f"Cholesky breakdown at lambda={lam!r}")
        self.lam = lam


class SecularSolveError(RegtrError):
    """The scalar Newton iteration failed to converge within its cap."""


class QTargetUnreachableError(RegtrError):
    """No lambda achieves the requested linearized-residual ratio.

    Happens when too much of the residual lies outside the range of J:
    the attainable ratio is bounded below by ``ratio_floor``.
    """

    def __init__(self, ratio_floor: float, q: float):
        super().__init__(
            f"linearized residual ratio cannot go below {ratio_floor:.3e}, "
            f"requested q={q:.3e}"
        )
        self.ratio_floor = ratio_floor
        self.q = q


class DiagnosticsUnavailableError(RegtrError):
    """The SVD did not converge; diagnostics cannot be formed."""


@dataclass(frozen=True)
class ShiftedSolve:
    """Solution of (B + lambda I) p = -g together with its step norms.

    ``chol_count`` is the number of Cholesky factorizations consumed to
    produce the step (including failed attempts) and ``newton_lambdas`` the
    sequence of lambda values visited by a secular Newton solve, when one
    was run.
    """

    lam: float
    p: Array
    p_norm: float
    model_residual_norm: float
    chol_count: int
    newton_iters: int = 0
    newton_lambdas: Tuple[float, ...] = ()


@dataclass(frozen=True)
class SvdDiagnostics:
    """SVD view of the shifted systems at one evaluation point."""

    singular_values: Array
    rank: int
    rotated_residual: Array   # U^T (F - y_delta)
    projector_residual_norm: float   # norm of the part outside range(J)

    def step_norm(self, lam: float) -> float:
        s = self.singular_values[: self.rank]
        r = self.rotated_residual[: self.rank]
        return float(np.sqrt(np.sum((s * r) ** 2 / (s**2 + lam) ** 2)))

    def model_residual_norm(self, lam: float) -> float:
        s = self.singular_values[: self.rank]
        r = self.rotated_residual[: self.rank]
        head = np.sum(lam**2 * r**2 / (s**2 + lam) ** 2)
        return float(np.sqrt(head + self.projector_residual_norm**2))


class _ShiftedFactor:
    """One Cholesky factorization of B + lambda I and the solves built on it.

    Exposes the step ``p``, its norm, the linearized residual norm
    ``||r + J p||`` and ``||L^{-1} p||^2`` (the quantity behind the
    derivative of ``||p(lambda)||``), all from a single factorization.
    """

    def __init__(self, point: EvalPoint, lam: float):
        n = point.n
        A = point.B + lam * np.eye(n)
        try:
            self.L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(lam) from None
        self.lam = lam
        # overflow on blown-up iterates yields inf/nan here; the Newton loops
        # detect that through their finiteness guards and back off
        with np.errstate(over="ignore", invalid="ignore"):
            z = solve_triangular(self.L, -point.g, lower=True, check_finite=False)
            self.p = solve_triangular(self.L.T, z, lower=False, check_finite=False)
            self.p_norm = float(np.linalg.norm(self.p))
            self.model_residual_norm = float(
                np.linalg.norm(point.F_minus_y + point.J @ self.p)
            )
        self._w_norm_sq: Optional[float] = None

    @property
    def w_norm_sq(self) -> float:
        """||L^{-1} p||^2 = p^T (B + lambda I)^{-1} p, reusing the factor."""
        if self._w_norm_sq is None:
            with np.errstate(over="ignore", invalid="ignore"):
                w = solve_triangular(self.L, self.p, lower=True, check_finite=False)
                self._w_norm_sq = float(w @ w)
        return self._w_norm_sq

    def as_solve(self, chol_count: int, newton_iters: int = 0,
                 newton_lambdas: Tuple[float, ...] = ()) -> ShiftedSolve:
        return ShiftedSolve(
            lam=self.lam, p=_freeze(self.p), p_norm=self.p_norm,
            model_residual_norm=self.model_residual_norm,
            chol_count=chol_count, newton_iters=newton_iters,
            newton_lambdas=newton_lambdas,
        )


def solve_shifted(B: Array, g: Array, residual: Array, J: Array, lam: float) -> ShiftedSolve:
    """Solve (B + lambda I) p = -g by one Cholesky factorization.

    Raises :class:`NotPositiveDefiniteError` on breakdown, which at
    ``lambda = 0`` callers interpret as ``||p(0)|| = +inf`` (the trust
    region is certainly active).
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    point = EvalPoint(
        x=np.zeros(g.shape[0]), F_minus_y=np.asarray(residual, dtype=float),
        J=np.asarray(J, dtype=float), B=np.asarray(B, dtype=float),
        g=np.asarray(g, dtype=float), phi=0.5 * float(residual @ residual),
    )
    return _ShiftedFactor(point, lam).as_solve(chol_count=1)


def svd_diagnostics(point: EvalPoint) -> SvdDiagnostics:
    """Singular values of J, rotated residual and out-of-range residual norm.

    Numerical rank counts singular values above ``sqrt(eps)`` times the
    largest one.
    """
    try:
        U, s, _ = np.linalg.svd(point.J)
    except np.linalg.LinAlgError:
        raise DiagnosticsUnavailableError("SVD of the Jacobian failed") from None
    r = U.T @ point.F_minus_y
    if s.size and s[0] > 0.0:
        rank = int(np.count_nonzero(s > SQRT_EPS * s[0]))
    else:
        rank = 0
    proj = float(np.linalg.norm(r[rank:]))
    return SvdDiagnostics(
        singular_values=_freeze(s), rank=rank,
        rotated_residual=_freeze(r), projector_residual_norm=proj,
    )


def q_ratio(point: EvalPoint, p: Array) -> float:
    """Linearized residual ratio ||r + J p|| / ||r|| for a step p."""
    resnorm = point.resnorm
    if resnorm == 0.0:
        raise ZeroResidualError("residual is zero; already converged")
    return float(np.linalg.norm(point.F_minus_y + point.J @ p)) / resnorm


def psi_and_derivative(point: EvalPoint, lam: float, delta: Optional[float] = None,
                       q_target: Optional[float] = None) -> Tuple[float, float]:
    """Secular function and derivative at lambda, from one factorization.

    Exactly one of ``delta`` (trust-region form ``1/||p|| - 1/delta``) and
    ``q_target`` (ratio form ``lambda/||r + J p|| - lambda/(q ||r||)``) must
    be given.  The derivative reuses the Cholesky factor through a single
    triangular solve; no second factorization is performed.
    """
    if (delta is None) == (q_target is None):
        raise ValueError("give exactly one of delta and q_target")
    f = _ShiftedFactor(point, lam)
    if delta is not None:
        psi = 1.0 / f.p_norm - 1.0 / delta
        dpsi = f.w_norm_sq / f.p_norm**3
        return psi, dpsi
    return _lm_psi(f, q_target * point.resnorm)


def _lm_psi(f: _ShiftedFactor, target: float) -> Tuple[float, float]:
    m = f.model_residual_norm
    psi = f.lam / m - f.lam / target
    # d||r + J p||/dlam = lam * ||L^{-1} p||^2 / ||r + J p||
    mprime = f.lam * f.w_norm_sq / m
    dpsi = 1.0 / m - f.lam * mprime / m**2 - 1.0 / target
    return psi, dpsi


def tr_secular_newton(point: EvalPoint, delta: float, tol_rel: float = 1e-2,
                      max_newton: int = 50) -> ShiftedSolve:
    """Trust-region step: lambda = 0 if interior, else Newton on the boundary.

    If the unshifted system is solvable with ``||p(0)|| <= delta`` the
    interior step is returned with ``lam = 0``.  Otherwise Newton is applied
    to ``1/||p(lambda)|| - 1/delta = 0``, safeguarded by the bracket
    ``[lam_lo, lam_hi]`` built from the sign of ``||p(lambda)|| - delta``
    (a Newton iterate leaving the bracket is replaced by its midpoint),
    and stops as soon as ``| delta - ||p(lambda)|| | <= tol_rel * delta``.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    gnorm = float(np.linalg.norm(point.g))
    if gnorm == 0.0:
        raise StationaryPointError("gradient is zero")
    chol = 0
    lam_lo = 0.0
    lam_hi = gnorm / delta        # ||p(lam)|| <= ||g||/lam, so the root is below
    lam_hi0 = lam_hi
    factor: Optional[_ShiftedFactor] = None
    try:
        factor = _ShiftedFactor(point, 0.0)
        chol += 1
        if factor.p_norm <= delta:
            return factor.as_solve(chol_count=chol)
        lam = 0.0
    except NotPositiveDefiniteError:
        chol += 1
        lam = min(1e-3 * lam_hi, lam_hi)
        factor = None

    lambdas = []
    iters = 0
    while iters < max_newton and chol <= 2 * max_newton:
        if factor is None:
            try:
                factor = _ShiftedFactor(point, lam)
            except NotPositiveDefiniteError:
                # only possible for lambda within rounding of zero; back off upward
                chol += 1
                lam = 0.5 * (lam + lam_hi) if lam > 0 else SQRT_EPS * lam_hi
                continue
            chol += 1
        iters += 1
        lambdas.append(lam)
        pn = factor.p_norm
        if abs(pn - delta) <= tol_rel * delta:
            return factor.as_solve(chol, iters, tuple(lambdas))
        if pn > delta:
            lam_lo = max(lam_lo, lam)
        else:
            lam_hi = min(lam_hi, lam)
            # g lies in range(B), so ||p(lambda)|| stays bounded as lambda -> 0;
            # a collapsing bracket with ||p|| < delta means the constraint is
            # inactive at the numerical rank and the step is effectively interior.
            if (lam_hi - lam_lo <= EPS * max(1.0, lam_hi)
                    or (lam_lo == 0.0 and lam <= 1e-10 * lam_hi0)):
                return factor.as_solve(chol, iters, tuple(lambdas))
        # Newton step for 1/||p|| - 1/delta = 0 expressed through the factor
        lam_next = lam + (pn**2 / factor.w_norm_sq) * ((pn - delta) / delta)
        if not np.isfinite(lam_next) or not (lam_lo < lam_next < lam_hi):
            lam_next = 0.5 * (lam_lo + lam_hi)
        lam = lam_next
        factor = None
    raise SecularSolveError(
        f"trust-region secular Newton did not converge in {max_newton} iterations"
    )


def lm_secular_newton(point: EvalPoint, q: float, tol: float = 1e-5,
                      max_newton: int = 50) -> ShiftedSolve:
    """Pick lambda so that ||r + J p(lambda)|| = q ||r||, by monotone Newton.

    Newton runs on the reformulated equation
    ``psi(lambda) = lambda/||r + J p(lambda)|| - lambda/(q ||r||)`` starting
    from the overestimate ``lambda_0 = q/(1-q) ||B||_2``; the iterates
    decrease monotonically to the root.  Feasibility requires the part of the
    residual outside range(J) to be smaller than ``q ||r||``, which is checked
    through the SVD when available.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    gnorm = float(np.linalg.norm(point.g))
    if gnorm == 0.0:
        raise StationaryPointError("gradient is zero")
    resnorm = point.resnorm
    if resnorm == 0.0:
        raise ZeroResidualError("residual is zero; already converged")
    target = q * resnorm

    try:
        diag = svd_diagnostics(point)
        if diag.projector_residual_norm >= target:
            raise QTargetUnreachableError(diag.projector_residual_norm / resnorm, q)
        bnorm = float(diag.singular_values[0] ** 2)
    except DiagnosticsUnavailableError:
        bnorm = float(np.linalg.norm(point.B, "fro"))   # upper bound on ||B||_2

    lam = q / (1.0 - q) * bnorm
    if lam <= 0.0:
        raise StationaryPointError("J vanishes; no damped step exists")
    chol = 0
    lambdas = []
    for iters in range(1, max_newton + 1):
        factor = _ShiftedFactor(point, lam)
        chol += 1
        lambdas.append(lam)
        m = factor.model_residual_norm
        if abs(m - target) <= tol * resnorm:
            return factor.as_solve(chol, iters, tuple(lambdas))
        psi, dpsi = _lm_psi(factor, target)
        lam_next = lam - psi / dpsi if dpsi != 0.0 else np.nan
        if not np.isfinite(lam_next) or not 0.0 < lam_next < lam:
            lam_next = 0.5 * lam    # concavity makes this a rare rounding fallback
        lam = lam_next
    raise SecularSolveError(
        f"damped-step secular Newton did not converge in {max_newton} iterations"
    )
