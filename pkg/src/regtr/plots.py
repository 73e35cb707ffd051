"""Figure rendering for the report paths of the command-line tool.

Each report command writes its delimited data and, next to it, a small set
of matplotlib figures: the computed approximation against the true
solutions, residual/error convergence, the per-iteration q-ratio against
the target band, and error-versus-noise decay curves.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .fredholm import FredholmProblem
from .solvers import SolveReport


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def save_solution_plot(problem: FredholmProblem, x_final, path, title: str = "") -> Path:
    """Final iterate (dotted) against the two true solutions (solid)."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    s = problem.grid
    for i, truth in enumerate(problem.true_solutions):
        ax.plot(s, truth, "-", lw=1.2, color="C0" if i == 0 else "C2",
                label=f"true solution {i + 1}")
    ax.plot(s, x_final, "r:", lw=1.8, label="computed")
    ax.set_xlabel("s")
    ax.set_ylabel("x(s)")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def save_convergence_plot(report: SolveReport, threshold: float, path,
                          title: str = "") -> Path:
    """Residual norm per accepted iteration (semilog), plus error when known."""
    acc = report.accepted_records
    ks = [r.k for r in acc]
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.semilogy(ks, [r.resnorm for r in acc], "*-", ms=4, label="residual norm")
    if acc and acc[0].err_truth is not None:
        ax.semilogy(ks, [r.err_truth for r in acc], "s-", ms=3,
                    label="distance to true solution")
    if threshold > 0:
        ax.axhline(threshold, color="k", lw=0.8, ls="--", label="stopping threshold")
    ax.set_xlabel("iteration")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def save_qtrace_plot(rows: Sequence, path, title: str = "") -> Path:
    """Two panels: q-ratio per iteration vs the target, and the error decay."""
    ks = [r[0] for r in rows]
    qks = [r[1] for r in rows]
    q = rows[0][2] if rows else float("nan")
    errs = [r[3] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ax1.plot(ks, qks, "*", ms=5, label="$q_k$")
    ax1.axhline(q, color="C1", lw=1.2, label="q")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("linearized residual ratio")
    ax1.legend(fontsize=8)
    if all(e is not None for e in errs):
        ax2.semilogy(ks, errs, "s-", ms=3)
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("distance to true solution")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def save_decay_plot(deltas: Sequence[float], errors: Sequence[float], path,
                    title: str = "") -> Path:
    """Final error versus noise level, log-log."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.loglog(deltas, errors, "o-", ms=5)
    ax.set_xlabel(r"noise level $\delta$")
    ax.set_ylabel("final distance to true solution")
    ax.invert_xaxis()
    if title:
        ax.set_title(title)
    return _save(fig, path)
