import dataclasses

import numpy as np
import pytest

from malm.exceptions import PreconditionError
from malm.numerics import RngStream
from malm.problems import full_gradient, generate_quadratic, make_quadratic
from malm.solvers import MalmParams, SolverState, malm_init, malm_step
from malm.verify import (
    REPORT_HEADER,
    VerifyConfig,
    check_dual_identity,
    check_cross_term,
    check_range_invariant,
    check_strong_convexity,
    descent_coefficients,
    mc_check_tracking_error,
    mc_check_momentum_increment,
    run_suite,
    write_reports_csv,
)

FAST = dict(n_steps=200, n_resamples=1000, n_mc_states=3, n_descent_states=2, sc_states=2,
            sc_trials=200)


def scalar_problem():
    return make_quadratic([[1.0]], [0.0], [[1.0]], [0.0])


def test_dual_identity_on_hand_step():
    p = scalar_problem()
    params = MalmParams(alpha=0.5, eta=4.0, beta=2.0)
    s0 = malm_init(p, [1.0], RngStream(0))
    s1 = malm_step(s0, params, p, RngStream(0))
    # A^T mu+ = 0.5 and -m - eta B dx = -1 - 4 * 0.5 * (-0.75) = 0.5
    assert check_dual_identity(s0, s1, params, p.A).passed
    bad = dataclasses.replace(s1, mu=s1.mu + 1e-3)
    rep = check_dual_identity(s0, bad, params, p.A)
    assert not rep.passed and rep.lhs == pytest.approx(1e-3)


def test_cross_term_with_exact_momentum():
    p = scalar_problem()
    x0 = np.array([1.0])
    s0 = SolverState(x=x0, mu=np.zeros(1), m=full_gradient(p, x0), x_prev=x0)
    s1 = dataclasses.replace(s0, x=np.array([0.4]))
    # lhs = |dx|^2 = 0.36, rhs = (1/(2 alpha) + L) |dx|^2
    rep = check_cross_term(s0, s1, p, 1.0, 0.5)
    assert rep.lhs == pytest.approx(0.36) and rep.rhs == pytest.approx(0.72) and rep.passed


def test_cross_term_detects_understated_smoothness():
    p = scalar_problem()
    x0 = np.array([1.0])
    s0 = SolverState(x=x0, mu=np.zeros(1), m=full_gradient(p, x0), x_prev=x0)
    s1 = dataclasses.replace(s0, x=np.array([0.4]))
    # true L = 1; with L = 0.1 and alpha = 1 the bound is 0.6 |dx|^2 < |dx|^2
    assert not check_cross_term(s0, s1, p, 0.1, 1.0).passed


def test_range_invariant_rank_deficient():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert check_range_invariant([np.zeros(2), np.array([2.0, 2.0])], A).passed
    assert not check_range_invariant([np.array([1.0, -1.0])], A).passed


def test_strong_convexity_holds_and_needs_eta_above_L():
    p = generate_quadratic(6, 2, seed=0)
    x = np.ones(6)
    mu = np.zeros(2)
    rep = check_strong_convexity(p, MalmParams(0.5, 2 * p.L, 1.0), x, mu, 200, RngStream(0))
    assert rep.passed and rep.n_samples == 0
    with pytest.raises(PreconditionError):
        check_strong_convexity(p, MalmParams(0.5, 0.5 * p.L, 1.0), x, mu, 10, RngStream(0))


def test_monte_carlo_checks_refuse_underpowered_runs():
    p = generate_quadratic(6, 2, sigma=0.5, seed=0)
    s = malm_init(p, np.zeros(6), RngStream(0))
    params = MalmParams(0.3, 10 * p.L, 1.0)
    with pytest.raises(PreconditionError):
        mc_check_tracking_error(p, s, params, 10, RngStream(1))
    with pytest.raises(PreconditionError):
        mc_check_momentum_increment(p, s, MalmParams(1.0, 10 * p.L, 1.0), 1000, RngStream(1))


def test_tracking_and_increment_bounds_hold_on_trajectory_state():
    p = generate_quadratic(8, 2, sigma=0.5, seed=1)
    lam = np.linalg.norm(p.A, 2) ** 2
    params = MalmParams(0.3, 8 * p.L, 0.25 * 8 * p.L / lam)
    s = malm_init(p, np.ones(8), RngStream(0))
    rng = RngStream(1)
    for _ in range(5):
        s = malm_step(s, params, p, rng)
    r2 = mc_check_tracking_error(p, s, params, 2000, RngStream(2))
    r3 = mc_check_momentum_increment(p, s, params, 2000, RngStream(3))
    assert r2.passed and r2.n_samples == 2000 and r2.stderr > 0
    assert r3.passed


def test_descent_coefficients_match_direct_formula():
    p = generate_quadratic(10, 3, seed=2)
    params = MalmParams(0.05, 30 * p.L, 2.0)
    q = 3.0
    c_dx, c_prev, c_sigma, theta = descent_coefficients(p, params, q)
    a, eta, beta, L = params.alpha, params.eta, params.beta, p.L
    lam = np.linalg.eigvalsh(p.A @ p.A.T).min()
    bn = np.linalg.norm(np.eye(10) - beta / eta * p.A.T @ p.A, 2)
    cm = 6 * a**2 / (beta * lam * (1 - a) ** 2)
    assert c_prev == pytest.approx(3 * eta**2 * bn**2 / (beta * lam), rel=1e-9)
    assert c_dx == pytest.approx((eta - L) / 2 - L - 1 / (2 * a) - c_prev - q * L**2 / a, rel=1e-9)
    assert c_sigma == pytest.approx(cm + q * a**2, rel=1e-9)
    assert theta == pytest.approx(q * a - a / 2 - cm, rel=1e-9)


@pytest.fixture(scope="module")
def suite_reports():
    return run_suite(VerifyConfig(**FAST))


def test_suite_passes_on_correct_solver(suite_reports):
    names = {r.check.split("[")[0] for r in suite_reports}
    assert names == {"dual-identity", "cross-term", "range-invariant", "strong-convexity",
                     "tracking-error", "momentum-increment", "descent", "descent-noiseless"}
    failed = [r for r in suite_reports if not r.passed]
    assert not failed, failed


def test_suite_detects_perturbed_dual_update():
    reports = run_suite(VerifyConfig(**FAST, checks=("dual-identity",),
                                     perturb=("dual-update", 1e-3)))
    assert not reports[0].passed


def test_report_csv_schema(suite_reports):
    lines = write_reports_csv(suite_reports).splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert len(lines) == len(suite_reports) + 1
    assert all(line.endswith(("true", "false")) for line in lines[1:])


def test_suite_rejects_unknown_check():
    with pytest.raises(ValueError):
        run_suite(VerifyConfig(**FAST, checks=("nope",)))


def test_interface_aliases():
    from malm import verify
    assert verify.check_lemma4 is check_cross_term
    assert verify.mc_check_lemma2 is mc_check_tracking_error
    assert verify.mc_check_lemma3 is mc_check_momentum_increment
