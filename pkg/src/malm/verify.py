"""Numeric checks of the per-step inequalities behind the convergence rate.

Algebraic statements are checked as exact identities up to round-off.
Statements that hold in expectation are checked by resampling the oracle
from a fixed state and comparing sample means, allowing ``z`` standard
errors of statistical slack. Monte-Carlo checks use the additive-noise
quadratic family, where ``L`` and ``sigma`` are exact.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import PreconditionError
from .metrics import format_float
from .numerics import RngStream, apply_B, b_matrix_norm, smallest_nonzero_eigenvalue, spectral_info
from .problems import QUADRATIC, full_gradient, generate_quadratic, objective
from .solvers import (
    ScheduleConstants,
    eta_threshold,
    malm_init,
    malm_step,
    schedule_for,
)

__all__ = [
    "InequalityReport",
    "VerifyConfig",
    "CHECKS",
    "augmented_lagrangian",
    "check_dual_identity",
    "check_strong_convexity",
    "check_cross_term",
    "mc_check_tracking_error",
    "mc_check_momentum_increment",
    "check_lemma4",
    "mc_check_lemma2",
    "mc_check_lemma3",
    "mc_check_descent",
    "check_range_invariant",
    "run_suite",
    "write_reports_csv",
    "REPORT_HEADER",
]

REPORT_HEADER = ("check", "lhs", "rhs", "slack", "n_samples", "stderr", "passed")
MIN_RESAMPLES = 1000


@dataclass(frozen=True)
class InequalityReport:
    check: str
    lhs: float
    rhs: float
    slack: float
    n_samples: int
    stderr: float
    passed: bool


def _deterministic(name, lhs, rhs, tol=None):
    tol = 1e-9 * (1 + abs(rhs)) if tol is None else tol
    return InequalityReport(name, float(lhs), float(rhs), float(rhs - lhs), 0, 0.0,
                            bool(lhs <= rhs + tol))


def _monte_carlo(name, lhs_samples, rhs_samples, z):
    lhs_samples = np.asarray(lhs_samples, dtype=float)
    rhs_samples = np.broadcast_to(np.asarray(rhs_samples, dtype=float), lhs_samples.shape)
    n = lhs_samples.size
    lhs = float(lhs_samples.mean())
    rhs = float(rhs_samples.mean())
    # paired standard error of the mean difference
    stderr = float(np.std(lhs_samples - rhs_samples, ddof=1) / math.sqrt(n))
    tol = max(1e-9 * (1 + abs(rhs)), z * stderr)
    return InequalityReport(name, lhs, rhs, rhs - lhs, n, stderr, bool(lhs <= rhs + tol))


def _require_resamples(n):
    if n < MIN_RESAMPLES:
        raise PreconditionError(f"n_resamples={n} is underpowered (need >= {MIN_RESAMPLES})")


def augmented_lagrangian(problem, x, mu, beta):
    r = problem.A @ x - problem.b
    return objective(problem, x) + mu @ r + 0.5 * beta * (r @ r)


# ---------------------------------------------------------------------------
# deterministic checks


def check_dual_identity(before, after, params, A, name="dual-identity", rtol=1e-10):
    """``A^T mu+ = -m - eta B (x+ - x)`` for one primal/dual transition.

    `before` supplies ``(x, m)``, `after` supplies ``(x+, mu+)``. The residual
    must stay below ``rtol * (1 + ||m||)``.
    """
    A = np.asarray(A, dtype=float)
    m = before.m
    dx = after.x - before.x
    resid = A.T @ after.mu + m + params.eta * apply_B(dx, A, params.beta, params.eta)
    lhs = float(np.linalg.norm(resid))
    return _deterministic(name, lhs, rtol * (1 + float(np.linalg.norm(m))), tol=0.0)


def check_strong_convexity(problem, params, x_r, mu_r, trials, rng, scale=1.0,
                           name="strong-convexity"):
    """First-order lower bound of the proximal model with modulus ``eta - L``.

    Reports the worst pair over `trials` random ``(x, z)`` drawn around
    ``x_r``.
    """
    if problem.family != QUADRATIC:
        raise PreconditionError("strong-convexity check needs the quadratic family")
    eta, beta = params.eta, params.beta
    if eta <= problem.L:
        raise PreconditionError(f"need eta > L (eta={eta:.4g}, L={problem.L:.4g})")
    gamma = eta - problem.L
    A, b = problem.A, problem.b

    def phi(x):
        r = A @ x - b
        return objective(problem, x) + mu_r @ r + 0.5 * beta * (r @ r) + 0.5 * eta * np.sum((x - x_r) ** 2)

    def grad_phi(z):
        return full_gradient(problem, z) + A.T @ (mu_r + beta * (A @ z - b)) + eta * (z - x_r)

    gen = rng.generator
    worst = None
    for _ in range(trials):
        x = x_r + scale * gen.standard_normal(problem.d)
        z = x_r + scale * gen.standard_normal(problem.d)
        lower = phi(z) + grad_phi(z) @ (x - z) + 0.5 * gamma * np.sum((x - z) ** 2)
        rep = _deterministic(name, lower, phi(x))
        if worst is None or rep.slack / (1 + abs(rep.rhs)) < worst.slack / (1 + abs(worst.rhs)):
            worst = rep
    return worst


def check_cross_term(before, after, problem, L, alpha, name="cross-term"):
    """``<grad f(x+) - m, dx> <= alpha/2 |grad f(x) - m|^2 + (1/(2 alpha) + L) |dx|^2``."""
    if alpha <= 0:
        raise PreconditionError("alpha must be positive")
    dx = after.x - before.x
    err = full_gradient(problem, before.x) - before.m
    lhs = (full_gradient(problem, after.x) - before.m) @ dx
    dx2 = dx @ dx
    rhs = 0.5 * alpha * (err @ err) + (0.5 / alpha + L) * dx2
    return _deterministic(name, lhs, rhs)


def check_range_invariant(mus, A, name="range-invariant", rtol=1e-8):
    """Every dual iterate lies in the column space of `A`.

    Reports the largest least-squares residual, normalized by ``1 + ||mu||``.
    """
    A = np.asarray(A, dtype=float)
    worst = 0.0
    for mu in mus:
        coef = np.linalg.lstsq(A, mu, rcond=None)[0]
        res = np.linalg.norm(mu - A @ coef) / (1 + np.linalg.norm(mu))
        worst = max(worst, float(res))
    return _deterministic(name, worst, rtol, tol=0.0)


# ---------------------------------------------------------------------------
# Monte-Carlo checks


def mc_check_tracking_error(problem, state, params, n_resamples, rng, z=4.0, step=malm_step,
                    name="tracking-error"):
    """Momentum tracking error after one step, resampling ``xi^{r+1}``.

    ``E|m+ - grad f(x+)|^2 <= (1-alpha)|m - grad f(x)|^2 + L^2/alpha |dx|^2 + alpha^2 sigma^2``
    """
    _require_resamples(n_resamples)
    a, L, sigma = params.alpha, problem.L, problem.sigma
    e0 = state.m - full_gradient(problem, state.x)
    lhs = np.empty(n_resamples)
    dx2 = None
    for i in range(n_resamples):
        new = step(state, params, problem, rng)
        e1 = new.m - full_gradient(problem, new.x)
        lhs[i] = e1 @ e1
        if dx2 is None:
            dx = new.x - state.x
            dx2 = dx @ dx
    rhs = (1 - a) * (e0 @ e0) + L**2 / a * dx2 + a**2 * sigma**2
    return _monte_carlo(name, lhs, rhs, z)


def mc_check_momentum_increment(problem, prev, params, n_resamples, rng, z=4.0, step=malm_step,
                    name="momentum-increment"):
    """Momentum increment bound, resampling the draw that produces ``m^r``.

    `prev` is the state at ``r - 1``; each resample forms ``m^r`` from it.
    ``E|m^r - m^{r-1}|^2 <= 2 alpha^2/(1-alpha)^2 (E|grad f(x^r) - m^r|^2 + sigma^2)``
    """
    _require_resamples(n_resamples)
    a, sigma = params.alpha, problem.sigma
    if a >= 1:
        raise PreconditionError("the momentum increment bound needs alpha < 1")
    coef = 2 * a**2 / (1 - a) ** 2
    lhs = np.empty(n_resamples)
    rhs = np.empty(n_resamples)
    for i in range(n_resamples):
        cur = step(prev, params, problem, rng)
        dm = cur.m - prev.m
        err = full_gradient(problem, cur.x) - cur.m
        lhs[i] = dm @ dm
        rhs[i] = coef * (err @ err + sigma**2)
    return _monte_carlo(name, lhs, rhs, z)


# names used by the published interface
check_lemma4 = check_cross_term
mc_check_lemma2 = mc_check_tracking_error
mc_check_lemma3 = mc_check_momentum_increment


def descent_coefficients(problem, params, q, theta=None):
    """Constants of the one-step potential bound.

    Returns ``(c_dx, c_prev, c_sigma, theta)`` such that

        E[P(r+1)] - P(r) <= -c_dx E|x^{r+1}-x^r|^2 + c_prev |x^r - x^{r-1}|^2
                            + c_sigma sigma^2 - theta E|grad f(x^r) - m^r|^2

    with ``P = L_beta(x, mu) + q |grad f(x) - m|^2``.
    """
    a, eta, beta, L = params.alpha, params.eta, params.beta, problem.L
    lam = smallest_nonzero_eigenvalue(problem.A)
    bn = b_matrix_norm(problem.A, beta, eta)
    c_b = 3 * eta**2 * bn**2 / (beta * lam)
    c_m = 6 * a**2 / (beta * lam * (1 - a) ** 2)
    p = a / 2 + c_m
    if theta is None:
        theta = q * a - p
    c_dx = (eta - L) / 2 - L - 1 / (2 * a) - c_b - q * L**2 / a
    c_sigma = c_m + q * a**2
    return c_dx, c_b, c_sigma, theta


def mc_check_descent(problem, prev, params, q, n_resamples, rng, z=4.0, theta=None,
                     step=malm_step, name="descent"):
    """One-step decrease of the potential ``L_beta + q |grad f - m|^2``.

    Both draws ``xi^r`` (from `prev`, the state at ``r - 1``) and
    ``xi^{r+1}`` are resampled, so the expectation matches the conditional
    expectation given the history up to ``r - 1``. With ``sigma = 0`` the
    check is deterministic and runs once.
    """
    if problem.family != QUADRATIC:
        raise PreconditionError("descent check needs the quadratic family")
    if params.eta <= problem.L or params.alpha >= 1:
        raise PreconditionError("descent check needs eta > L and alpha < 1")
    c_dx, c_prev, c_sigma, theta = descent_coefficients(problem, params, q, theta)
    if theta <= 0:
        raise PreconditionError("theta = q alpha - p must be positive")
    sigma2 = problem.sigma**2
    beta = params.beta

    def potential(s):
        e = full_gradient(problem, s.x) - s.m
        return augmented_lagrangian(problem, s.x, s.mu, beta) + q * (e @ e), e @ e

    n = 1 if problem.sigma == 0 else n_resamples
    if problem.sigma > 0:
        _require_resamples(n_resamples)
    lhs = np.empty(n)
    rhs = np.empty(n)
    for i in range(n):
        cur = step(prev, params, problem, rng)
        nxt = step(cur, params, problem, rng)
        p0, err2 = potential(cur)
        p1, _ = potential(nxt)
        dx = nxt.x - cur.x
        dprev = cur.x - prev.x
        lhs[i] = p1 - p0
        rhs[i] = -c_dx * (dx @ dx) + c_prev * (dprev @ dprev) + c_sigma * sigma2 - theta * err2
    if n == 1:
        return _deterministic(name, lhs[0], rhs[0])
    return _monte_carlo(name, lhs, rhs, z)


# ---------------------------------------------------------------------------
# suite

CHECKS = ("dual-identity", "strong-convexity", "tracking-error", "momentum-increment",
          "cross-term", "descent", "descent-noiseless", "range-invariant")
PERTURBATIONS = ("dual-update", "primal-update", "momentum")


@dataclass
class VerifyConfig:
    seed: int = 0
    d: int = 20
    m: int = 5
    condition: float = 10.0
    sigma: float = 0.5
    n_steps: int = 1000
    n_resamples: int = 10_000
    z: float = 4.0
    n_mc_states: int = 20
    n_descent_states: int = 10
    sc_states: int = 5
    sc_trials: int = 2000
    c_alpha: float = 0.5
    c_theta: float = 0.01
    eta_margin: float = 1.05
    penalty_ratio: float = 0.25
    checks: tuple = CHECKS
    perturb: tuple | None = None


def _perturbed_step(kind, eps):
    if kind not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {kind!r}; expected one of {PERTURBATIONS}")

    def step(state, params, problem, rng):
        new = malm_step(state, params, problem, rng)
        if kind == "dual-update":
            return replace(new, mu=new.mu + eps)
        if kind == "primal-update":
            return replace(new, x=new.x + eps)
        return replace(new, m=new.m + eps)

    return step


def verification_constants(problem, cfg, K):
    """Schedule constants used by the suite.

    ``c_eta`` sits just above the schedule's lower bound and ``c_beta`` keeps
    ``(beta/eta) ||A||^2`` at `cfg.penalty_ratio`.
    """
    c_eta = cfg.eta_margin * eta_threshold(problem.L, cfg.c_alpha, cfg.c_theta)
    lam_max = spectral_info(problem.A, 1.0).lambda_max
    c_beta = c_eta * cfg.penalty_ratio / lam_max
    return ScheduleConstants(cfg.c_alpha, c_eta, c_beta, cfg.c_theta, K)


def run_suite(cfg=None, problem=None):
    """Run the selected checks on a MALM trajectory; return the list of reports."""
    cfg = cfg or VerifyConfig()
    for c in cfg.checks:
        if c not in CHECKS:
            raise ValueError(f"unknown check {c!r}; expected one of {CHECKS}")
    if problem is None:
        problem = generate_quadratic(cfg.d, cfg.m, cfg.condition, cfg.sigma, cfg.seed)
    constants = verification_constants(problem, cfg, cfg.n_steps)
    params, validity = schedule_for(problem, constants)
    step = malm_step if cfg.perturb is None else _perturbed_step(*cfg.perturb)

    traj_rng = RngStream(cfg.seed, 0)
    states = [malm_init(problem, np.zeros(problem.d), traj_rng)]
    for _ in range(cfg.n_steps):
        states.append(step(states[-1], params, problem, traj_rng))

    reports = []
    want = set(cfg.checks)

    if "dual-identity" in want:
        worst = max((check_dual_identity(s0, s1, params, problem.A)
                     for s0, s1 in zip(states, states[1:])),
                    key=lambda rep: rep.lhs - rep.rhs)
        reports.append(worst)

    if "cross-term" in want:
        worst = max((check_cross_term(s0, s1, problem, problem.L, params.alpha)
                     for s0, s1 in zip(states, states[1:])),
                    key=lambda rep: (rep.lhs - rep.rhs) / (1 + abs(rep.rhs)))
        reports.append(worst)

    if "range-invariant" in want:
        reports.append(check_range_invariant([s.mu for s in states], problem.A))

    def pick(k):
        idx = np.linspace(0, cfg.n_steps - 1, k).astype(int)
        return [states[i] for i in idx]

    mc = RngStream(cfg.seed, 1)
    if "strong-convexity" in want:
        for j, s in enumerate(pick(cfg.sc_states)):
            reports.append(check_strong_convexity(problem, params, s.x, s.mu, cfg.sc_trials,
                                                  mc.substream(100 + j),
                                                  name=f"strong-convexity[r={s.r}]"))
    if "tracking-error" in want:
        for j, s in enumerate(pick(cfg.n_mc_states)):
            reports.append(mc_check_tracking_error(problem, s, params, cfg.n_resamples,
                                           mc.substream(200 + j), cfg.z, step,
                                           name=f"tracking-error[r={s.r}]"))
    if "momentum-increment" in want:
        for j, s in enumerate(pick(cfg.n_mc_states)):
            reports.append(mc_check_momentum_increment(problem, s, params, cfg.n_resamples,
                                           mc.substream(300 + j), cfg.z, step,
                                           name=f"momentum-increment[r={s.r + 1}]"))
    if "descent" in want:
        for j, s in enumerate(pick(cfg.n_descent_states)):
            reports.append(mc_check_descent(problem, s, params, validity.q, cfg.n_resamples,
                                            mc.substream(400 + j), cfg.z, validity.theta, step,
                                            name=f"descent[r={s.r + 1}]"))
    if "descent-noiseless" in want:
        quiet = replace(problem, sigma=0.0)
        for j, s in enumerate(pick(cfg.n_descent_states)):
            reports.append(mc_check_descent(quiet, s, params, validity.q, 1,
                                            mc.substream(500 + j), cfg.z, validity.theta, step,
                                            name=f"descent-noiseless[r={s.r + 1}]"))
    return reports


def write_reports_csv(reports, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for rep in reports:
        w.writerow((rep.check, format_float(rep.lhs), format_float(rep.rhs),
                    format_float(rep.slack), rep.n_samples, format_float(rep.stderr),
                    "true" if rep.passed else "false"))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
