"""Discretized first-kind integral test problems P1-P4 with known solutions.

Each problem discretizes ``int_0^1 k(t, s, x(s)) ds = y(t)`` on an
equidistant grid ``t_i = s_j = (i-1) h``, ``h = 1/(n-1)``, expanding ``x`` in
the standard piecewise-linear hat basis (so nodal values are the unknowns)
and applying the composite trapezoidal rule.  Two kernels are used:

* ``log(((t-s)^2 + H^2) / ((t-s)^2 + (H-x)^2))``  (P1 with H=0.2, P2 with
  H=0.1; both model parameter identification in groundwater hydrology),
* ``1 / sqrt(1 + (t-s)^2 + x^2)``                 (P3, P4; gravimetry).

Every problem has two true solutions mapping to the same exact data: the log
kernel depends on ``(H-x)^2`` so ``x`` and ``2H - x`` are indistinguishable,
and the square-root kernel is even in ``x``.  Data are perturbed by seeded
i.i.d. Gaussian noise calibrated so that ``E ||y - y_delta||^2 = delta^2``
(per-entry standard deviation ``delta / sqrt(n)``), which keeps the noise
level consistent with the bound the discrepancy principle assumes.  Two
alternative readings are available as switches: per-entry standard deviation
``delta`` (``"std"``) and per-entry variance ``delta`` (``"variance"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import Array, ConfigError, EvaluationError, NonlinearSystem, _freeze

RNG_ID = "pcg64"

PROBLEM_IDS = ("P1", "P2", "P3", "P4")

# Gaussian-bump solution of P1; the constant term is calibrated so that the
# solution vanishes at s = 0 (and numerically also at s = 1, where both
# bumps are negligible).
_C1, _C2 = -0.1, -0.075
_D1, _D2 = -40.0, -60.0
_S1, _S2 = 0.4, 0.67
_C34 = -(_C1 * math.exp(_D1 * _S1**2) + _C2 * math.exp(_D2 * _S2**2))

_H = {"P1": 0.2, "P2": 0.1}


def _p1_true(s: Array) -> Array:
    return _C1 * np.exp(_D1 * (s + _S1) ** 2) + _C2 * np.exp(_D2 * (s - _S2) ** 2) + _C34


def _p2_true(s: Array) -> Array:
    return 1.3 * s * (1.0 - s) + 0.2


def _p4_true(s: Array) -> Array:
    return np.where(s <= 0.5, 1.0, 0.0)


def true_solution_functions(problem_id: str) -> Tuple[Callable[[Array], Array], ...]:
    """The two continuous true solutions of a problem, first one generates the data."""
    if problem_id == "P1":
        H = _H["P1"]
        return (_p1_true, lambda s: 2.0 * H - _p1_true(s))
    if problem_id == "P2":
        H = _H["P2"]
        return (_p2_true, lambda s: 2.0 * H - _p2_true(s))
    if problem_id == "P3":
        return (lambda s: np.ones_like(s), lambda s: -np.ones_like(s))
    if problem_id == "P4":
        return (_p4_true, lambda s: -_p4_true(s))
    raise ConfigError(f"unknown problem id {problem_id!r}")


DEFAULT_GUESSES = {
    "P1": ("0e", "-0.5e", "-1e", "-2e"),
    "P2": ("0e", "0.5e", "1e", "2e"),
    "P3": ("alpha=1.25", "alpha=1.5", "alpha=1.75", "alpha=2"),
    "P4": ("beta=1,chi=1", "beta=0.5,chi=0", "beta=1.5,chi=1", "beta=1.5,chi=0"),
}


def hat_basis(j: int, s, n: int):
    """Piecewise-linear nodal basis function phi_j evaluated at s (0-based j)."""
    h = 1.0 / (n - 1)
    sj = j * h
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    if j > 0:
        mask = (s >= sj - h) & (s <= sj)
        out = np.where(mask, (s - (sj - h)) / h, out)
    if j < n - 1:
        mask = (s >= sj) & (s <= sj + h)
        out = np.where(mask, ((sj + h) - s) / h, out)
    else:
        out = np.where(s == sj, 1.0, out)
    if j == 0:
        out = np.where(s == sj, 1.0, out)
    return out


def nodal_interpolant(x: Array, s, n: Optional[int] = None):
    """Evaluate the hat-basis expansion with nodal coefficients x at points s."""
    n = len(x) if n is None else n
    return sum(x[j] * hat_basis(j, s, n) for j in range(n))


def _kernel_log(dist_sq: Array, u: Array, H: float) -> Array:
    denom = dist_sq + (H - u[None, :]) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log((dist_sq + H * H) / denom)


def _kernel_log_du(dist_sq: Array, u: Array, H: float) -> Array:
    hm = H - u[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        return 2.0 * hm / (dist_sq + hm**2)


def _kernel_invsqrt(dist_sq: Array, u: Array) -> Array:
    return 1.0 / np.sqrt(1.0 + dist_sq + u[None, :] ** 2)


def _kernel_invsqrt_du(dist_sq: Array, u: Array) -> Array:
    return -u[None, :] * (1.0 + dist_sq + u[None, :] ** 2) ** (-1.5)


def kernel_function(problem_id: str) -> Callable[[float, float, float], float]:
    """Continuous kernel k(t, s, u) of a problem (scalar or broadcast form)."""
    if problem_id in ("P1", "P2"):
        H = _H[problem_id]

        def k(t, s, u):
            d2 = (t - s) ** 2
            return np.log((d2 + H * H) / (d2 + (H - u) ** 2))

        return k
    if problem_id in ("P3", "P4"):
        return lambda t, s, u: 1.0 / np.sqrt(1.0 + (t - s) ** 2 + u**2)
    raise ConfigError(f"unknown problem id {problem_id!r}")


@dataclass(frozen=True)
class FredholmProblem:
    """One discretized test problem with seeded noisy data.

    ``true_solutions`` holds the two nodal true-solution vectors; ``y`` is
    the forward image of the first and is what the noise is added to.
    """

    id: str
    n: int
    delta: float
    seed: int
    noise_scale: str
    grid: Array
    true_solutions: Tuple[Array, Array]
    y: Array
    y_delta: Array
    rng_id: str = RNG_ID
    _dist_sq: Array = field(repr=False, compare=False, default=None)
    _weights: Array = field(repr=False, compare=False, default=None)

    def forward(self, x: Array) -> Array:
        """Trapezoidal forward map F(x), raising on kernel singularities."""
        x = np.asarray(x, dtype=float)
        if self.id in ("P1", "P2"):
            K = _kernel_log(self._dist_sq, x, _H[self.id])
        else:
            K = _kernel_invsqrt(self._dist_sq, x)
        F = K @ self._weights
        if not np.all(np.isfinite(F)):
            raise EvaluationError(f"{self.id}: kernel singular or overflowed", x)
        return F

    def jacobian(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if self.id in ("P1", "P2"):
            dK = _kernel_log_du(self._dist_sq, x, _H[self.id])
        else:
            dK = _kernel_invsqrt_du(self._dist_sq, x)
        J = dK * self._weights[None, :]
        if not np.all(np.isfinite(J)):
            raise EvaluationError(f"{self.id}: kernel derivative singular", x)
        return J

    def system(self, analytic_jacobian: bool = False) -> NonlinearSystem:
        """Wrap as a NonlinearSystem; the Jacobian defaults to finite differences."""
        return NonlinearSystem(
            n=self.n, evaluate=self.forward, y_delta=self.y_delta,
            noise_level=self.delta, exact_data=self.y,
            jacobian=self.jacobian if analytic_jacobian else None,
        )

    def initial_guess(self, selector: str) -> Array:
        return initial_guess(self.id, selector, self.n)


def _trap_weights(n: int) -> Array:
    h = 1.0 / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _assemble(problem_id: str, n: int) -> Tuple[Array, Tuple[Array, Array], Array, Array, Array]:
    s = np.linspace(0.0, 1.0, n)
    fns = true_solution_functions(problem_id)
    truths = tuple(np.asarray(f(s), dtype=float) for f in fns)
    dist_sq = (s[:, None] - s[None, :]) ** 2
    weights = _trap_weights(n)
    return s, truths, dist_sq, weights


def build_problem(problem_id: str, n: int = 64, delta: float = 1e-4, seed: int = 0,
                  noise_scale: str = "norm") -> FredholmProblem:
    """Construct a problem: sample truths, form exact data, add seeded noise.

    ``noise_scale`` picks the per-entry Gaussian standard deviation:
    ``"norm"`` (default) uses ``delta / sqrt(n)`` so the noise vector's
    expected squared norm is ``delta^2``; ``"std"`` uses ``delta``;
    ``"variance"`` uses ``sqrt(delta)``.
    """
    if problem_id not in PROBLEM_IDS:
        raise ConfigError(f"unknown problem id {problem_id!r}")
    if n < 3:
        raise ConfigError(f"need n >= 3 grid points, got {n}")
    if delta < 0:
        raise ConfigError(f"delta must be nonnegative, got {delta}")
    if noise_scale not in ("norm", "std", "variance"):
        raise ConfigError(
            f"noise_scale must be 'norm', 'std' or 'variance', got {noise_scale!r}")
    s, truths, dist_sq, weights = _assemble(problem_id, n)
    prob = FredholmProblem(
        id=problem_id, n=n, delta=delta, seed=seed, noise_scale=noise_scale,
        grid=_freeze(s), true_solutions=tuple(_freeze(t) for t in truths),
        y=np.empty(0), y_delta=np.empty(0),
        _dist_sq=_freeze(dist_sq), _weights=_freeze(weights),
    )
    y = prob.forward(truths[0])
    y_delta = _perturb(y, delta, np.random.default_rng(seed), noise_scale)
    object.__setattr__(prob, "y", _freeze(y))
    object.__setattr__(prob, "y_delta", _freeze(y_delta))
    return prob


def _perturb(y: Array, delta: float, rng: np.random.Generator, noise_scale: str) -> Array:
    if delta == 0.0:
        return y.copy()
    if noise_scale == "norm":
        scale = delta / math.sqrt(y.size)
    elif noise_scale == "std":
        scale = delta
    else:
        scale = math.sqrt(delta)
    return y + scale * rng.standard_normal(y.size)


def noise_sweep(problem_id: str, deltas: Sequence[float], seed: int = 0, n: int = 64,
                noise_scale: str = "norm") -> List[FredholmProblem]:
    """One problem per noise level, sharing the exact data.

    All levels draw from a single generator seeded once, so the whole sweep
    is reproducible from (problem_id, deltas, seed, n).
    """
    base = build_problem(problem_id, n=n, delta=0.0, seed=seed, noise_scale=noise_scale)
    rng = np.random.default_rng(seed)
    out = []
    for delta in deltas:
        if delta < 0:
            raise ConfigError(f"delta must be nonnegative, got {delta}")
        y_delta = _perturb(base.y, float(delta), rng, noise_scale)
        prob = FredholmProblem(
            id=problem_id, n=n, delta=float(delta), seed=seed, noise_scale=noise_scale,
            grid=base.grid, true_solutions=base.true_solutions,
            y=base.y, y_delta=_freeze(y_delta),
            _dist_sq=base._dist_sq, _weights=base._weights,
        )
        out.append(prob)
    return out


def _parse_selector(problem_id: str, selector: str) -> Tuple[str, Tuple[float, ...]]:
    text = selector.strip().lower().replace(" ", "")
    if text.startswith("x0="):
        text = text[3:]
    if problem_id in ("P1", "P2"):
        if not text.endswith("e"):
            raise ConfigError(f"{problem_id} guess must look like '-0.5e', got {selector!r}")
        coeff_text = text[:-1]
        if coeff_text in ("", "+"):
            coeff = 1.0
        elif coeff_text == "-":
            coeff = -1.0
        else:
            try:
                coeff = float(coeff_text)
            except ValueError:
                raise ConfigError(f"cannot parse guess {selector!r}") from None
        return f"{coeff:g}e", (coeff,)
    if problem_id == "P3":
        if text.startswith("alpha="):
            text = text[6:]
        try:
            alpha = float(text)
        except ValueError:
            raise ConfigError(f"P3 guess must look like 'alpha=1.5', got {selector!r}") from None
        return f"alpha={alpha:g}", (alpha,)
    if problem_id == "P4":
        parts = text.split(",")
        vals = {}
        try:
            if len(parts) == 2 and "=" not in text:
                vals["beta"], vals["chi"] = float(parts[0]), float(parts[1])
            else:
                for part in parts:
                    key, _, value = part.partition("=")
                    if key not in ("beta", "chi"):
                        raise ValueError(key)
                    vals[key] = float(value)
                if set(vals) != {"beta", "chi"}:
                    raise ValueError("missing key")
        except ValueError:
            raise ConfigError(
                f"P4 guess must look like 'beta=1.5,chi=0', got {selector!r}") from None
        return f"beta={vals['beta']:g},chi={vals['chi']:g}", (vals["beta"], vals["chi"])
    raise ConfigError(f"unknown problem id {problem_id!r}")


def canonical_selector(problem_id: str, selector: str) -> str:
    """Normalized label for an initial-guess selector (used in reports)."""
    return _parse_selector(problem_id, selector)[0]


def initial_guess(problem_id: str, selector: str, n: int = 64) -> Array:
    """Sample the named starting guess on the n-point grid.

    P1/P2 use constant vectors ``c e``; P3 uses the parabola
    ``(-4a+4) s^2 + (4a-4) s + 1`` (equal to 1 at both ends, ``a`` at the
    midpoint); P4 uses the line ``beta - chi s``.
    """
    _, params = _parse_selector(problem_id, selector)
    s = np.linspace(0.0, 1.0, n)
    if problem_id in ("P1", "P2"):
        return np.full(n, params[0])
    if problem_id == "P3":
        a = params[0]
        return (-4.0 * a + 4.0) * s**2 + (4.0 * a - 4.0) * s + 1.0
    beta, chi = params
    return beta - chi * s


@dataclass(frozen=True)
class ErrorMetrics:
    """Max-norm errors against the nearest true solution.

    ``e_interior`` skips the two endpoint nodes; ``e_total`` includes them.
    """

    e_interior: float
    e_total: float
    truth_index: int


def nearest_truth(x: Array, problem: FredholmProblem) -> Tuple[int, Array]:
    """Index and vector of the true solution closest (Euclidean) to x."""
    dists = [float(np.linalg.norm(x - t)) for t in problem.true_solutions]
    idx = int(np.argmin(dists))
    return idx, problem.true_solutions[idx]


def error_metrics(x: Array, problem: FredholmProblem) -> ErrorMetrics:
    x = np.asarray(x, dtype=float)
    idx, truth = nearest_truth(x, problem)
    diff = np.abs(truth - x)
    return ErrorMetrics(
        e_interior=float(np.max(diff[1:-1])),
        e_total=float(np.max(diff)),
        truth_index=idx,
    )
