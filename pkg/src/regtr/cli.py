"""Command-line harness: single solves, result tables, noise sweeps, q-traces.

Subcommands
-----------
solve   one run; writes trace.csv + summary.csv (+ solution/convergence figures)
table   the 4x4 benchmark grid at delta=1e-4 (table 1) or 1e-2 (table 2)
sweep   one (problem, guess) across several noise levels; writes sweep.csv + decay figure
qtrace  per-iteration q-ratio and error of a regularizing trust-region run

Configuration precedence: built-in defaults < config file (key=value lines)
< command-line flags.  The output directory may also come from the
``REGTR_OUT`` environment variable.  Exit codes: 0 success (discrepancy met
where applicable), 1 usage/configuration error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .core import RegtrError
from .fredholm import PROBLEM_IDS
from .harness import (
    CONFIG_KEYS, RunSpec, qtrace_rows, run_spec, sweep_runs, table_grid,
    write_qtrace_csv, write_summary_csv, write_sweep_csv, write_trace_csv,
)
from .solvers import Status

_FLOAT_KEYS = ("delta", "tau", "q", "eta", "gamma", "mu0", "nu", "delta_min",
               "delta_max", "tr_newton_tol", "lm_newton_tol", "c_min", "c_max")
_INT_KEYS = ("seed", "n", "max_iter", "table", "secular_max_newton")

DEFAULTS: Dict[str, object] = {
    "problem": "P1", "x0": "0e", "delta": 1e-4, "method": "rtr", "seed": 0,
    "n": 64, "noise_scale": "norm", "out": "runs", "figures": True,
    "deltas": "1e-1,1e-2,1e-3,1e-4", "methods": "rtr,rlm", "table": 1,
}


def _coerce(key: str, value):
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _INT_KEYS:
        return int(value)
    if key == "figures" and isinstance(value, str):
        return value.lower() in ("1", "true", "yes", "on")
    return value


def read_config_file(path) -> Dict[str, object]:
    """Flat ``key=value`` text; '#' starts a comment, blank lines ignored."""
    settings: Dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise RegtrError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key = key.strip().replace("-", "_")
        settings[key] = _coerce(key, value.strip())
    return settings


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", choices=PROBLEM_IDS)
    p.add_argument("--x0", help="initial guess selector, e.g. 0e, -0.5e, alpha=1.5, beta=1.5,chi=0")
    p.add_argument("--delta", type=float, help="noise level")
    p.add_argument("--method", choices=("rtr", "rlm", "str"))
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="grid size")
    p.add_argument("--tau", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--mu0", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--radius-rule", choices=("practical", "strict"), dest="radius_rule")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--noise-scale", choices=("norm", "std", "variance"), dest="noise_scale")
    p.add_argument("--out", help="output directory (env REGTR_OUT also honored)")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--no-figures", action="store_const", const=False, dest="figures",
                   default=None, help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regtr",
        description="Regularizing trust-region / Levenberg-Marquardt experiments "
                    "on ill-posed integral-equation benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one solve and write its trace")
    _add_common(p_solve)

    p_table = sub.add_parser("table", help="reproduce a benchmark results table")
    p_table.add_argument("table", type=int, choices=(1, 2), nargs="?")
    p_table.add_argument("--methods", help="comma list from rtr,rlm,str")
    _add_common(p_table)

    p_sweep = sub.add_parser("sweep", help="solve across decreasing noise levels")
    p_sweep.add_argument("--deltas", help="comma list of noise levels")
    _add_common(p_sweep)

    p_qtrace = sub.add_parser("qtrace", help="per-iteration q-ratio and error data")
    _add_common(p_qtrace)
    return parser


def _settings(args: argparse.Namespace) -> Dict[str, object]:
    merged = dict(DEFAULTS)
    if args.config:
        merged.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is not None:
            merged[key] = value
    if args.out is None and "REGTR_OUT" in os.environ and (
            not args.config or "out" not in read_config_file(args.config)):
        merged["out"] = os.environ["REGTR_OUT"]
    return merged


def _overrides(settings: Dict[str, object]) -> Dict[str, object]:
    return {k: settings[k] for k in CONFIG_KEYS if k in settings}


def _spec(settings: Dict[str, object], method: Optional[str] = None) -> RunSpec:
    return RunSpec(
        problem=settings["problem"], x0=settings["x0"],
        delta=float(settings["delta"]), seed=int(settings["seed"]),
        method=method or settings["method"], n=int(settings["n"]),
        noise_scale=settings["noise_scale"], config_overrides=_overrides(settings),
    )


def _exit_code(status: Status) -> int:
    return 0 if status is Status.DISCREPANCY_MET else 2


def cmd_solve(settings: Dict[str, object]) -> int:
    out = Path(settings["out"])
    report, row, problem = run_spec(_spec(settings))
    write_trace_csv(out / "trace.csv", report.trace)
    write_summary_csv(out / "summary.csv", [row])
    if settings["figures"]:
        from . import plots
        label = f"{row.problem} x0={row.x0} {row.method}"
        plots.save_solution_plot(problem, report.x_final, out / "solution.png", label)
        plots.save_convergence_plot(report, settings.get("tau", 1.5) * problem.delta,
                                    out / "convergence.png", label)
    print(f"{row.problem} x0={row.x0} {row.method}: {row.status}  it={row.it} "
          f"nf={row.nf} cf={row.cf} resnorm={row.resnorm_final:.3e} "
          f"e_I={row.e_I:.3e} e_T={row.e_T:.3e}")
    print(f"wrote {out / 'trace.csv'} and {out / 'summary.csv'}")
    return _exit_code(report.status)


def cmd_table(settings: Dict[str, object]) -> int:
    table = int(settings["table"])
    methods = [m.strip() for m in str(settings["methods"]).split(",") if m.strip()]
    for m in methods:
        if m not in ("rtr", "rlm", "str"):
            raise RegtrError(f"unknown method {m!r}")
    rows = table_grid(table, methods=methods, seed=int(settings["seed"]),
                      n=int(settings["n"]), noise_scale=settings["noise_scale"],
                      config_overrides=_overrides(settings))
    out = Path(settings["out"])
    path = out / f"table{table}.csv"
    write_summary_csv(path, rows)
    for row in rows:
        print(f"{row.problem:3s} {row.x0:16s} {row.method}  it={row.it:3d} "
              f"resnorm={row.resnorm_final:.2e} nf={row.nf:3d} cf={row.cf} "
              f"e_I={row.e_I:.2e} e_T={row.e_T:.2e}  {row.status}")
    print(f"wrote {path}")
    return 0


def cmd_sweep(settings: Dict[str, object]) -> int:
    deltas = [float(d) for d in str(settings["deltas"]).split(",") if d.strip()]
    rows = sweep_runs(settings["problem"], settings["x0"], deltas,
                      seed=int(settings["seed"]), method=settings["method"],
                      n=int(settings["n"]), noise_scale=settings["noise_scale"],
                      config_overrides=_overrides(settings))
    out = Path(settings["out"])
    write_sweep_csv(out / "sweep.csv", rows)
    if settings["figures"]:
        from . import plots
        plots.save_decay_plot([r.delta for r in rows], [r.err_truth for r in rows],
                              out / "decay.png",
                              f"{settings['problem']} x0={settings['x0']} {settings['method']}")
    for r in rows:
        print(f"delta={r.delta:.3e} k*={r.k_star:3d} err={r.err_truth:.3e} "
              f"e_I={r.e_I:.3e} e_T={r.e_T:.3e} {r.status}")
    print(f"wrote {out / 'sweep.csv'}")
    return 0


def cmd_qtrace(settings: Dict[str, object]) -> int:
    if settings["method"] != "rtr":
        raise RegtrError("qtrace reports the regularizing trust-region method; "
                         "use --method rtr")
    spec = _spec(settings, method="rtr")
    report, row, problem = run_spec(spec)
    cfg_q = _overrides(settings).get("q") or (1.1 / float(settings.get("tau", 1.5)))
    rows = qtrace_rows(report, cfg_q)
    out = Path(settings["out"])
    write_qtrace_csv(out / "qtrace.csv", rows)
    if settings["figures"]:
        from . import plots
        plots.save_qtrace_plot(rows, out / "qtrace.png",
                               f"{row.problem} x0={row.x0} delta={problem.delta:g}")
    n_above = sum(1 for r in rows if r[1] >= cfg_q)
    print(f"{row.problem} x0={row.x0}: {row.status} it={row.it}; "
          f"q_k >= q at {n_above}/{len(rows)} iterations")
    print(f"wrote {out / 'qtrace.csv'}")
    return _exit_code(report.status)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        settings = _settings(args)
        if args.command == "solve":
            return cmd_solve(settings)
        if args.command == "table":
            return cmd_table(settings)
        if args.command == "sweep":
            return cmd_sweep(settings)
        return cmd_qtrace(settings)
    except (RegtrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
