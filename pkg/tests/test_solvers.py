import math

import numpy as np
import pytest

import regtr.solvers as solvers
from regtr.core import ConfigError, NonlinearSystem, evaluate_point
from regtr.fredholm import build_problem, initial_guess
from regtr.solvers import (
    IterationRecord, Method, PracticalRadiusRule, SolverConfig, StandardRadiusRule,
    Status, compute_rho, run_acceptance_loop, solve,
)


def linear_system(A, y_delta, delta=0.0):
    A = np.asarray(A, dtype=float)
    return NonlinearSystem(n=A.shape[0], evaluate=lambda x: A @ x,
                           y_delta=np.asarray(y_delta, dtype=float),
                           noise_level=delta)


def rosenbrock_like_system(delta=0.0, y=None):
    def f(x):
        return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

    y = np.zeros(2) if y is None else y
    return NonlinearSystem(n=2, evaluate=f, y_delta=y, noise_level=delta)


# ------------------------------------------------------------------ config

def test_config_defaults_resolve_q():
    cfg = SolverConfig()
    assert cfg.q == pytest.approx(1.1 / 1.5)
    assert cfg.method is Method.REGULARIZING_TR


@pytest.mark.parametrize("bad", [
    dict(tau=1.0), dict(q=1.5), dict(eta=0.0), dict(gamma=1.0), dict(nu=0.5),
    dict(mu0=0.0), dict(delta_min=1.0, delta_max=0.5), dict(c_min=2.0, c_max=1.0),
    dict(radius_rule="loose"), dict(method="bogus"),
])
def test_config_validation(bad):
    with pytest.raises((ConfigError, ValueError)):
        SolverConfig(**bad)


def test_noisy_run_requires_q_above_one_over_tau():
    sys = linear_system(np.eye(2), [1.0, 1.0], delta=0.1)
    cfg = SolverConfig(q=0.5, tau=1.5)   # 0.5 < 1/1.5
    with pytest.raises(ConfigError):
        solve(sys, np.zeros(2), cfg)


# ------------------------------------------------------------------ compute_rho

def test_rho_affine_residual_is_one():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    sys = NonlinearSystem(n=4, evaluate=lambda x: A @ x,
                          y_delta=rng.standard_normal(4), noise_level=0.0,
                          jacobian=lambda x: A)
    pt = evaluate_point(sys, rng.standard_normal(4))
    p = -0.1 * pt.g / np.linalg.norm(pt.g)   # short gradient step: pred > 0
    rho, ared, pred, trial = compute_rho(pt, p, sys)
    assert pred > 0
    assert ared == pytest.approx(pred, rel=1e-9)
    assert rho == pytest.approx(1.0, rel=1e-9)


def test_rho_zero_step_rejected():
    sys = linear_system(np.eye(2), [1.0, 0.0])
    pt = evaluate_point(sys, np.zeros(2))
    rho, ared, pred, _ = compute_rho(pt, np.zeros(2), sys)
    assert pred == 0.0
    assert rho == -math.inf


def test_pred_cauchy_lower_bound_on_accepted_steps():
    # predicted reduction of the subproblem solution with effective radius
    # ||p|| is at least the classical gradient-step bound
    prob = build_problem("P3", delta=1e-2, seed=3)
    sys = prob.system()
    rep = solve(sys, initial_guess("P3", "alpha=1.5"), SolverConfig(method="rtr"))
    x = initial_guess("P3", "alpha=1.5")
    for rec in rep.trace:
        if not rec.accepted:
            continue
        pt = evaluate_point(sys, x)
        from regtr.subproblem import tr_secular_newton
        sol = tr_secular_newton(pt, rec.delta)
        pred = pt.phi - 0.5 * sol.model_residual_norm**2
        gnorm = np.linalg.norm(pt.g)
        bnorm = np.linalg.norm(pt.J, 2) ** 2
        bound = 0.5 * gnorm * min(sol.p_norm, gnorm / bnorm)
        assert pred >= bound * (1.0 - 1e-8)
        x = x + sol.p


# ------------------------------------------------------------------ radius rules

def test_practical_rule_mu_update_branches():
    cfg = SolverConfig()
    q = cfg.q
    rule = PracticalRadiusRule(cfg)
    rule.after_accept(q_ratio=0.5, rho=1.0, delta_used=0.2, p_norm=0.2, resnorm_prev=1.0)
    assert rule.mu == pytest.approx(0.2 / 6.0)          # ratio below q: shrink by 6
    rule.mu = 0.1
    rule.after_accept(q_ratio=0.99, rho=1.0, delta_used=0.3, p_norm=0.3, resnorm_prev=1.0)
    assert rule.mu == pytest.approx(0.6)                # ratio above nu*q: double
    rule.mu = 0.1
    rule.after_accept(q_ratio=(q + cfg.nu * q) / 2, rho=1.0, delta_used=0.4,
                      p_norm=0.4, resnorm_prev=1.0)
    assert rule.mu == pytest.approx(0.4)                # in the band: unchanged


def test_first_radius_is_mu0_times_residual():
    prob = build_problem("P1", delta=1e-2, seed=0)
    sys = prob.system()
    x0 = initial_guess("P1", "0e")
    rep = solve(sys, x0, SolverConfig(method="rtr"))
    r0 = np.linalg.norm(prob.forward(x0) - prob.y_delta)
    assert rep.trace[0].delta == pytest.approx(0.1 * r0)


def test_standard_rule_branches():
    cfg = SolverConfig(method="str")
    rule = StandardRadiusRule(cfg)
    pt = evaluate_point(linear_system(np.eye(1), [0.0]), np.array([5.0]))
    assert rule.propose(pt) == 1.0                      # problem-scale independent
    rule.after_accept(q_ratio=0.9, rho=0.9, delta_used=1.0, p_norm=1.0,
                      resnorm_prev=5.0)
    assert rule.delta_next == 2.0                       # good ratio: double
    rule.after_accept(q_ratio=0.9, rho=0.5, delta_used=2.0, p_norm=1.5,
                      resnorm_prev=5.0)
    assert rule.delta_next == 2.0                       # middling ratio: keep
    rule.after_accept(q_ratio=0.9, rho=0.9, delta_used=9e3, p_norm=9e3,
                      resnorm_prev=5.0)
    assert rule.delta_next == cfg.delta_max             # doubling caps at delta_max


def test_standard_rule_shrink_uses_quarter_step_norm():
    cfg = SolverConfig(method="str")
    rule = StandardRadiusRule(cfg)
    assert rule.shrink(1.0, 0.8) == pytest.approx(0.2)
    assert PracticalRadiusRule(SolverConfig()).shrink(1.0, 0.8) == pytest.approx(1.0 / 6.0)


# ------------------------------------------------------------------ solve loop

def test_immediate_stop_when_already_below_threshold():
    sys = linear_system(np.eye(2), [1.0, 1.0], delta=10.0)
    rep = solve(sys, np.zeros(2), SolverConfig(method="rtr"))
    assert rep.status is Status.DISCREPANCY_MET
    assert rep.it == 0 and rep.nf == 1 and rep.trace == []


def test_affine_problem_first_trial_accepted():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    sys = linear_system(A, rng.standard_normal(4), delta=1e-8)
    rep = solve(sys, np.zeros(4), SolverConfig(method="rtr"))
    assert rep.status is Status.DISCREPANCY_MET
    assert all(r.accepted for r in rep.trace)           # rho = 1 >= eta on every trial
    assert all(r.rho == pytest.approx(1.0, rel=1e-6) for r in rep.trace)


def test_stationary_point_status():
    # F(x) = x^2 at x = 0 with data 1: residual -1, J = 0, gradient 0
    sys = NonlinearSystem(n=1, evaluate=lambda x: x**2, y_delta=np.ones(1),
                          noise_level=0.0, jacobian=lambda x: 2.0 * x[None, :])
    rep = solve(sys, np.zeros(1), SolverConfig(method="rtr"))
    assert rep.status is Status.STATIONARY_POINT


def test_radius_collapse_status():
    # acceptance is impossible below delta_min when every trial increases phi
    def f(x):
        return np.array([x[0] + 50.0 * np.sin(x[0])])

    sys = NonlinearSystem(n=1, evaluate=f, y_delta=np.array([200.0]), noise_level=0.0)
    cfg = SolverConfig(method="rtr", delta_min=1.0, mu0=0.05)
    rep = solve(sys, np.array([2.0]), cfg)
    assert rep.status is Status.RADIUS_COLLAPSED
    assert rep.trace and not rep.trace[-1].accepted


def test_lm_subproblem_failure_with_diagnostic():
    A = np.array([[1.0, 0.0], [0.0, 0.0]])     # residual mostly outside range(A)
    sys = linear_system(A, [0.05, 1.0], delta=1e-3)
    rep = solve(sys, np.zeros(2), SolverConfig(method="rlm"))
    assert rep.status is Status.SUBPROBLEM_FAILURE
    assert "ratio floor" in rep.note
    assert rep.it == 0


def test_lm_step_hits_model_target():
    prob = build_problem("P3", delta=1e-2, seed=2)
    sys = prob.system()
    cfg = SolverConfig(method="rlm")
    rep = solve(sys, initial_guess("P3", "alpha=1.5"), cfg)
    assert rep.status is Status.DISCREPANCY_MET
    for rec in rep.trace:
        assert rec.accepted
        assert math.isnan(rec.rho) and math.isnan(rec.delta)
        assert rec.q_ratio == pytest.approx(cfg.q, abs=2e-5)
        assert rec.lam > 0.0


def test_lm_scalar_end_to_end():
    # one unknown, affine map: every damped step satisfies the ratio equation
    sys = linear_system(np.eye(1), [1.0], delta=1e-2)
    cfg = SolverConfig(method="rlm", q=0.75)
    rep = solve(sys, np.zeros(1), cfg)
    assert rep.status is Status.DISCREPANCY_MET
    bound = cfg.q / (1 - cfg.q)   # ||B|| = 1
    for rec in rep.trace:
        assert 0.0 < rec.lam <= bound * (1 + 1e-9)


def test_max_iter_exceeded():
    prob = build_problem("P1", delta=1e-4, seed=0)
    rep = solve(prob.system(), initial_guess("P1", "0e"),
                SolverConfig(method="rtr", max_iter=3))
    assert rep.status is Status.MAX_ITER_EXCEEDED
    assert rep.it == 3


# ------------------------------------------------------- run-level invariants

@pytest.fixture(scope="module")
def p2_run():
    prob = build_problem("P2", delta=1e-2, seed=5)
    rep = solve(prob.system(), initial_guess("P2", "0.5e"),
                SolverConfig(method="rtr"), truths=prob.true_solutions)
    return prob, rep


def test_monotone_residual_over_accepted(p2_run):
    _, rep = p2_run
    res = [r.resnorm for r in rep.trace if r.accepted]
    assert all(a > b for a, b in zip(res, res[1:]))


def test_counter_consistency(p2_run):
    _, rep = p2_run
    assert rep.nf == 1 + len(rep.trace)
    assert rep.nf - rep.it - 1 == rep.n_rejected_total
    assert rep.cf == int(math.floor(rep.total_chol / rep.it + 0.5))


def test_accepted_records_pass_acceptance_threshold(p2_run):
    _, rep = p2_run
    cfg = SolverConfig()
    for rec in rep.trace:
        if rec.accepted:
            assert rec.rho >= cfg.eta


def test_stopping_index_is_first_below_threshold(p2_run):
    prob, rep = p2_run
    assert rep.status is Status.DISCREPANCY_MET
    threshold = 1.5 * prob.delta
    accepted = [r for r in rep.trace if r.accepted]
    # every accepted iterate before the final one was above the threshold
    assert all(r.resnorm > threshold for r in accepted)
    assert rep.resnorm_final <= threshold


def test_truth_error_attached(p2_run):
    prob, rep = p2_run
    errs = [r.err_truth for r in rep.trace]
    assert all(e is not None for e in errs)
    truth = prob.true_solutions[rep.truth_index]
    assert rep.err_truth_final == pytest.approx(
        np.linalg.norm(rep.x_final - truth))


def test_nearest_truth_selection():
    prob = build_problem("P3", delta=1e-2, seed=1)
    rep = solve(prob.system(), -1.02 * np.ones(64), SolverConfig(method="rtr"),
                truths=prob.true_solutions)
    assert rep.truth_index == 1   # started and stays near the negative solution


def test_rejected_trials_logged_with_rho(p2_run):
    prob = build_problem("P4", delta=1e-4, seed=7)
    rep = solve(prob.system(), initial_guess("P4", "beta=1,chi=1"),
                SolverConfig(method="rtr"))
    rejected = [r for r in rep.trace if not r.accepted]
    assert rejected, "expected at least one rejected trial on this run"
    assert all(np.isfinite(r.rho) or r.rho == -math.inf for r in rejected)
    ks = [r.k for r in rep.trace]
    assert ks == sorted(ks)


# ------------------------------------------------ shared acceptance machinery

def test_acceptance_loop_reproducible_bitwise():
    prob = build_problem("P2", delta=1e-2, seed=9)
    sys = prob.system()
    pt = evaluate_point(sys, initial_guess("P2", "1e"))
    cfg = SolverConfig(method="rtr")
    shrink = PracticalRadiusRule(cfg).shrink
    out1 = run_acceptance_loop(sys, pt, 0.05, shrink, cfg, 0, [])
    out2 = run_acceptance_loop(sys, pt, 0.05, shrink, cfg, 0, [])
    assert out1[0] == out2[0]
    assert np.array_equal(out1[1].p, out2[1].p)


def test_methods_share_acceptance_loop(monkeypatch):
    # force the standard method onto the regularizing radius proposals: the
    # entire trace must then match the regularizing method bit for bit
    prob = build_problem("P3", delta=1e-2, seed=4)
    sys = prob.system()
    x0 = initial_guess("P3", "alpha=1.5")
    rep_rtr = solve(sys, x0, SolverConfig(method="rtr"))
    monkeypatch.setattr(solvers, "StandardRadiusRule", solvers.PracticalRadiusRule)
    rep_str = solve(sys, x0, SolverConfig(method="str"))
    assert rep_str.trace == rep_rtr.trace
    assert np.array_equal(rep_str.x_final, rep_rtr.x_final)


def test_strict_radius_rule_enforces_interval():
    prob = build_problem("P3", delta=1e-2, seed=6)
    sys = prob.system()
    x0 = initial_guess("P3", "alpha=1.25")
    cfg = SolverConfig(method="rtr", radius_rule="strict")
    rep = solve(sys, x0, cfg)
    x = x0
    for rec in rep.trace:
        pt = evaluate_point(sys, x)
        gnorm = np.linalg.norm(pt.g)
        bnorm = np.linalg.norm(pt.J, 2) ** 2
        hi = min(cfg.c_max, (1 - cfg.q) / bnorm) * gnorm
        if rec.n_rejected == 0:   # proposals; shrunken retries may go below
            assert rec.delta <= hi * (1 + 1e-12)
        if rec.accepted:
            x = x + tr_step(sys, x, rec.delta, cfg)


def tr_step(sys, x, delta, cfg):
    from regtr.subproblem import tr_secular_newton
    pt = evaluate_point(sys, x)
    return tr_secular_newton(pt, delta, cfg.tr_newton_tol).p


def test_strict_mode_keeps_q_condition():
    prob = build_problem("P3", delta=1e-2, seed=6)
    sys = prob.system()
    cfg = SolverConfig(method="rtr", radius_rule="strict")
    # every strict-mode proposal respects the q-condition radius bound, so
    # the corresponding step keeps the ratio above q (up to the 1e-2 working
    # tolerance of the boundary solve)
    rep = solve(sys, initial_guess("P3", "alpha=1.25"), cfg)
    first_trials = [rec for rec in rep.trace if rec.n_rejected == 0]
    assert first_trials
    for rec in first_trials:
        assert rec.q_ratio >= cfg.q - 1e-2
