"""Outer iterations for noisy square systems, stopped by the discrepancy principle.

Three methods share the step machinery of :mod:`regtr.subproblem`:

* ``rtr`` - regularizing trust region.  The radius is proposed as
  ``mu_k * ||F(x_k) - y_delta||`` and ``mu`` is adapted from the linearized
  residual ratio ``q_k`` of the last accepted step, which drives the radius
  to zero together with the residual and keeps the constraint active.
* ``rlm`` - regularizing damped Gauss-Newton (Levenberg-Marquardt with the
  damping chosen so the linearized residual equals ``q`` times the current
  one).  Every step is taken; there is no acceptance test.
* ``str`` - standard trust region with the classical radius update, included
  as a non-regularizing baseline.

Both trust-region methods run the same inner acceptance loop (reject while
``rho < eta``, shrinking the radius); only the radius proposals differ.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    Array, ConfigError, EvalPoint, EvaluationError, NonlinearSystem,
    discrepancy_met, evaluate_point, zero_noise_atol,
)
from .subproblem import (
    QTargetUnreachableError, SecularSolveError, ShiftedSolve,
    StationaryPointError, lm_secular_newton, tr_secular_newton,
)


class Method(str, Enum):
    REGULARIZING_TR = "rtr"
    REGULARIZING_LM = "rlm"
    STANDARD_TR = "str"


class Status(str, Enum):
    DISCREPANCY_MET = "DiscrepancyMet"
    MAX_ITER_EXCEEDED = "MaxIterExceeded"
    RADIUS_COLLAPSED = "RadiusCollapsed"
    STATIONARY_POINT = "StationaryPoint"
    SUBPROBLEM_FAILURE = "SubproblemFailure"


@dataclass(frozen=True)
class SolverConfig:
    """All solver constants.  Defaults follow the benchmark setup.

    ``q`` defaults to ``1.1 / tau``; noisy runs additionally require
    ``q > 1/tau``, which is checked when a solve starts.
    """

    method: Method = Method.REGULARIZING_TR
    tau: float = 1.5
    q: Optional[float] = None
    eta: float = 0.25
    gamma: float = 1.0 / 6.0
    nu: float = 1.1
    mu0: float = 0.1
    delta_max: float = 1e4
    delta_min: float = 1e-12
    max_iter: int = 300
    tr_newton_tol: float = 1e-2
    lm_newton_tol: float = 1e-5
    secular_max_newton: int = 50
    radius_rule: str = "practical"
    c_min: float = 1e-4
    c_max: float = 1e2

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.tau <= 1.0:
            raise ConfigError(f"tau must exceed 1, got {self.tau}")
        if self.q is None:
            object.__setattr__(self, "q", 1.1 / self.tau)
        if not 0.0 < self.q < 1.0:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.nu < 1.0:
            raise ConfigError(f"nu must be at least 1, got {self.nu}")
        if self.mu0 <= 0.0:
            raise ConfigError(f"mu0 must be positive, got {self.mu0}")
        if not 0.0 < self.delta_min < self.delta_max:
            raise ConfigError("need 0 < delta_min < delta_max")
        if not 0.0 < self.c_min < self.c_max:
            raise ConfigError("need 0 < c_min < c_max")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be nonnegative")
        if self.radius_rule not in ("practical", "strict"):
            raise ConfigError(f"unknown radius rule {self.radius_rule!r}")
        if self.tr_newton_tol <= 0 or self.lm_newton_tol <= 0:
            raise ConfigError("secular tolerances must be positive")
        if self.secular_max_newton < 1:
            raise ConfigError("secular_max_newton must be positive")


@dataclass(frozen=True)
class IterationRecord:
    """One trial step.  Accepted and rejected trials both get a record."""

    k: int                      # outer iteration index
    resnorm: float              # ||F(x_k) - y_delta|| at the current iterate
    delta: float                # radius used for this trial (nan for rlm)
    lam: float                  # multiplier of the trial step
    rho: float                  # achieved/predicted reduction (nan for rlm)
    q_ratio: float              # ||r + J p|| / ||r|| of the trial step
    accepted: bool
    n_rejected: int             # rejected trials earlier in this iteration
    chol: int                   # Cholesky factorizations used by this trial
    err_truth: Optional[float] = None   # ||x_k - truth||, when a truth is known


@dataclass
class SolveReport:
    """Outcome of one solver run, with the full per-trial trace."""

    status: Status
    x_final: Array
    it: int
    nf: int
    cf: int
    trace: List[IterationRecord]
    resnorm_final: float
    total_chol: int
    note: str = ""
    truth_index: Optional[int] = None
    err_truth_final: Optional[float] = None

    @property
    def accepted_records(self) -> List[IterationRecord]:
        return [r for r in self.trace if r.accepted]

    @property
    def n_rejected_total(self) -> int:
        return sum(1 for r in self.trace if not r.accepted)


def compute_rho(point: EvalPoint, p: Array, sys: NonlinearSystem,
                model_residual_norm: Optional[float] = None,
                ) -> Tuple[float, float, float, EvalPoint]:
    """Achieved vs predicted reduction of phi for a trial step.

    ``ared = phi(x) - phi(x + p)`` and ``pred = phi(x) - 0.5 ||r + J p||^2``.
    A nonpositive ``pred`` yields ``rho = -inf`` so the caller rejects.
    Raises :class:`EvaluationError` when the trial point is not evaluable;
    the evaluation still counts as performed.
    """
    trial = evaluate_point(sys, point.x + p)
    if model_residual_norm is None:
        model_residual_norm = float(np.linalg.norm(point.F_minus_y + point.J @ p))
    ared = point.phi - trial.phi
    pred = point.phi - 0.5 * model_residual_norm**2
    rho = ared / pred if pred > 0.0 else -math.inf
    return rho, ared, pred, trial


class PracticalRadiusRule:
    """Radius ``mu_k * ||residual||`` with ``mu`` adapted by the q-ratio.

    ``delta_k = mu_k ||F(x_k) - y_delta||`` is kept as an identity: when the
    acceptance loop shrinks the radius, ``mu_k`` shrinks with it.  After an
    accepted step with ratio ``q_k``, ``mu`` shrinks by 6 when ``q_k < q``
    (the step cut the linearized residual too aggressively) and doubles when
    ``q_k > nu q``.  In ``strict`` mode the proposal is further projected
    onto ``[c_min ||g||, min(c_max, (1-q)/||B||) ||g||]``, the interval that
    provably keeps the q-condition; an empty interval resolves to its upper
    end.
    """

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        self.mu = cfg.mu0

    def propose(self, point: EvalPoint) -> float:
        cfg = self.cfg
        delta = self.mu * point.resnorm
        if cfg.radius_rule == "strict":
            gnorm = float(np.linalg.norm(point.g))
            try:
                bnorm = float(np.linalg.norm(point.J, 2)) ** 2
            except np.linalg.LinAlgError:
                bnorm = float(np.linalg.norm(point.B, "fro"))
            hi = min(cfg.c_max, (1.0 - cfg.q) / bnorm) * gnorm
            lo = cfg.c_min * gnorm
            delta = min(max(delta, lo), hi)
        return min(max(delta, cfg.delta_min), cfg.delta_max)

    def shrink(self, delta: float, p_norm: float) -> float:
        return self.cfg.gamma * delta

    def after_accept(self, q_ratio: float, rho: float, delta_used: float,
                     p_norm: float, resnorm_prev: float) -> None:
        self.mu = delta_used / resnorm_prev
        if q_ratio < self.cfg.q:
            self.mu /= 6.0
        elif q_ratio > self.cfg.nu * self.cfg.q:
            self.mu *= 2.0


class StandardRadiusRule:
    """Classical update: quarter on poor ratio, keep, or double on a good one."""

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        self.delta_next = 1.0

    def propose(self, point: EvalPoint) -> float:
        cfg = self.cfg
        return min(max(self.delta_next, cfg.delta_min), cfg.delta_max)

    def shrink(self, delta: float, p_norm: float) -> float:
        return p_norm / 4.0

    def after_accept(self, q_ratio: float, rho: float, delta_used: float,
                     p_norm: float, resnorm_prev: float) -> None:
        if rho < 0.25:
            self.delta_next = p_norm / 4.0
        elif rho <= 0.75:
            self.delta_next = delta_used
        else:
            self.delta_next = min(2.0 * delta_used, self.cfg.delta_max)


class _RadiusCollapsed(Exception):
    def __init__(self, records: List[IterationRecord]):
        self.records = records


def run_acceptance_loop(sys: NonlinearSystem, point: EvalPoint, delta_start: float,
                        shrink: Callable[[float, float], float], cfg: SolverConfig,
                        k: int, notes: List[str],
                        ) -> Tuple[List[IterationRecord], ShiftedSolve, EvalPoint, float, float]:
    """Repeat: trust-region trial at the current radius until ``rho >= eta``.

    Returns (records, accepted solve, accepted point, radius used, rho).
    Shrinking below ``delta_min`` aborts with a radius-collapse signal.
    Shared verbatim by the regularizing and the standard trust-region
    methods; only ``delta_start`` and ``shrink`` differ between them.
    """
    delta = delta_start
    records: List[IterationRecord] = []
    n_rejected = 0
    while True:
        sol = tr_secular_newton(point, delta, cfg.tr_newton_tol, cfg.secular_max_newton)
        try:
            rho, ared, pred, trial = compute_rho(point, sol.p, sys, sol.model_residual_norm)
            if pred <= 0.0:
                notes.append(f"iteration {k}: nonpositive predicted reduction; trial rejected")
        except EvaluationError:
            rho, trial = -math.inf, None
            notes.append(f"iteration {k}: trial point not evaluable; rejected")
        qk = sol.model_residual_norm / point.resnorm
        accepted = trial is not None and rho >= cfg.eta
        records.append(IterationRecord(
            k=k, resnorm=point.resnorm, delta=delta, lam=sol.lam, rho=rho,
            q_ratio=qk, accepted=accepted, n_rejected=n_rejected, chol=sol.chol_count,
        ))
        if accepted:
            return records, sol, trial, delta, rho
        n_rejected += 1
        new_delta = shrink(delta, sol.p_norm)
        if new_delta < cfg.delta_min:
            raise _RadiusCollapsed(records)
        delta = new_delta


def damped_step(point: EvalPoint, cfg: SolverConfig) -> ShiftedSolve:
    """The regularizing damped step: p(lambda) with the q-equation multiplier."""
    return lm_secular_newton(point, cfg.q, cfg.lm_newton_tol, cfg.secular_max_newton)


def solve(sys: NonlinearSystem, x0: Array, cfg: SolverConfig,
          truths: Optional[Sequence[Array]] = None) -> SolveReport:
    """Run the configured method from x0 until the discrepancy principle stops it.

    When candidate true solutions are supplied, each record's ``err_truth``
    and the report's final error are filled against whichever candidate is
    closest to the final iterate.
    """
    if sys.noise_level > 0.0 and cfg.q <= 1.0 / cfg.tau:
        raise ConfigError(
            f"noisy data requires q > 1/tau (q={cfg.q}, 1/tau={1.0 / cfg.tau})"
        )
    x0 = np.asarray(x0, dtype=float)
    point = evaluate_point(sys, x0)
    atol = zero_noise_atol(sys.y_delta) if sys.noise_level == 0.0 else 0.0

    trace: List[IterationRecord] = []
    iterates: List[Array] = [point.x]
    notes: List[str] = []
    nf = 1
    it = 0
    status: Optional[Status] = None

    if discrepancy_met(point, sys.noise_level, cfg.tau, atol):
        status = Status.DISCREPANCY_MET
    elif cfg.method is Method.REGULARIZING_LM:
        status, point, it, nf = _run_lm(sys, point, cfg, atol, trace, iterates, notes, nf)
    else:
        status, point, it, nf = _run_tr(sys, point, cfg, atol, trace, iterates, notes, nf)

    total_chol = sum(r.chol for r in trace)
    cf = int(math.floor(total_chol / it + 0.5)) if it > 0 else 0
    report = SolveReport(
        status=status, x_final=point.x, it=it, nf=nf, cf=cf, trace=trace,
        resnorm_final=point.resnorm, total_chol=total_chol,
        note="; ".join(notes),
    )
    if truths:
        _attach_truth_errors(report, iterates, truths)
    return report


def _run_tr(sys, point, cfg, atol, trace, iterates, notes, nf):
    rule = (StandardRadiusRule(cfg) if cfg.method is Method.STANDARD_TR
            else PracticalRadiusRule(cfg))
    it = 0
    for k in range(cfg.max_iter):
        if float(np.linalg.norm(point.g)) == 0.0:
            notes.append(f"iteration {k}: zero gradient")
            return Status.STATIONARY_POINT, point, it, nf
        delta_start = rule.propose(point)
        try:
            records, sol, trial, delta_used, rho = run_acceptance_loop(
                sys, point, delta_start, rule.shrink, cfg, k, notes)
        except _RadiusCollapsed as rc:
            trace.extend(rc.records)
            nf += len(rc.records)
            notes.append(f"iteration {k}: radius shrank below delta_min")
            return Status.RADIUS_COLLAPSED, point, it, nf
        except StationaryPointError as e:
            notes.append(f"iteration {k}: {e}")
            return Status.STATIONARY_POINT, point, it, nf
        except SecularSolveError as e:
            notes.append(f"iteration {k}: {e}")
            return Status.SUBPROBLEM_FAILURE, point, it, nf
        trace.extend(records)
        nf += len(records)
        point = trial
        iterates.append(point.x)
        it += 1
        rule.after_accept(records[-1].q_ratio, rho, delta_used, sol.p_norm,
                          records[-1].resnorm)
        if discrepancy_met(point, sys.noise_level, cfg.tau, atol):
            return Status.DISCREPANCY_MET, point, it, nf
    return Status.MAX_ITER_EXCEEDED, point, it, nf


def _run_lm(sys, point, cfg, atol, trace, iterates, notes, nf):
    it = 0
    for k in range(cfg.max_iter):
        if float(np.linalg.norm(point.g)) == 0.0:
            notes.append(f"iteration {k}: zero gradient")
            return Status.STATIONARY_POINT, point, it, nf
        try:
            sol = damped_step(point, cfg)
        except QTargetUnreachableError as e:
            notes.append(
                f"iteration {k}: q-equation infeasible, residual ratio floor "
                f"{e.ratio_floor:.3e} >= q={e.q:.3e}")
            return Status.SUBPROBLEM_FAILURE, point, it, nf
        except (SecularSolveError, StationaryPointError) as e:
            notes.append(f"iteration {k}: {e}")
            return Status.SUBPROBLEM_FAILURE, point, it, nf
        qk = sol.model_residual_norm / point.resnorm
        try:
            trial = evaluate_point(sys, point.x + sol.p)
        except EvaluationError:
            nf += 1
            trace.append(IterationRecord(
                k=k, resnorm=point.resnorm, delta=math.nan, lam=sol.lam,
                rho=-math.inf, q_ratio=qk, accepted=False, n_rejected=0,
                chol=sol.chol_count))
            notes.append(f"iteration {k}: step left the evaluable domain")
            return Status.SUBPROBLEM_FAILURE, point, it, nf
        nf += 1
        trace.append(IterationRecord(
            k=k, resnorm=point.resnorm, delta=math.nan, lam=sol.lam,
            rho=math.nan, q_ratio=qk, accepted=True, n_rejected=0,
            chol=sol.chol_count))
        point = trial
        iterates.append(point.x)
        it += 1
        if discrepancy_met(point, sys.noise_level, cfg.tau, atol):
            return Status.DISCREPANCY_MET, point, it, nf
    return Status.MAX_ITER_EXCEEDED, point, it, nf


def _attach_truth_errors(report: SolveReport, iterates: List[Array],
                         truths: Sequence[Array]) -> None:
    dists = [float(np.linalg.norm(report.x_final - np.asarray(t, dtype=float)))
             for t in truths]
    idx = int(np.argmin(dists))
    truth = np.asarray(truths[idx], dtype=float)
    errs = [float(np.linalg.norm(x - truth)) for x in iterates]
    report.truth_index = idx
    report.err_truth_final = dists[idx]
    report.trace = [dataclasses.replace(r, err_truth=errs[r.k]) for r in report.trace]
