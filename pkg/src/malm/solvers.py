"""Momentum-based linearized augmented Lagrangian solver and baselines.

All three solvers share the state layout ``(x, mu, m, x_prev, r, grad_evals)``
and the primal/dual updates

    x+  = x - (m + A^T mu + beta A^T (A x - b)) / eta
    mu+ = mu + beta (A x+ - b)

and differ only in how the gradient estimate ``m`` is refreshed:

* ``malm``: Polyak momentum ``m+ = (1 - alpha) m + alpha g(x+; xi+)``
* ``storm_alm``: recursive momentum with one sample at ``x+`` and ``x``
* ``spd``: plain stochastic primal-dual with free stepsizes (tau, rho)
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .exceptions import DivergenceError, ParameterError
from .metrics import Reservoir, Trace, make_record
from .numerics import RngStream, SpectralInfo, as_vector, spectral_info
from .problems import _draw, _draw_shared

log = logging.getLogger(__name__)

__all__ = [
    "SOLVERS",
    "MalmParams",
    "ScheduleConstants",
    "ScheduleValidity",
    "SolverState",
    "schedule",
    "schedule_for",
    "eta_threshold",
    "malm_init",
    "malm_step",
    "storm_alm_step",
    "spd_step",
    "malm_run",
    "run_solver",
]

SOLVERS = ("malm", "storm_alm", "spd")
DIVERGENCE_BOUND = 1e12


@dataclass(frozen=True)
class MalmParams:
    alpha: float
    eta: float
    beta: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.eta <= 0 or self.beta <= 0:
            raise ParameterError("eta and beta must be positive")


@dataclass(frozen=True)
class ScheduleConstants:
    """Horizon-scaled schedule ``alpha = c_alpha/sqrt(K)``, ``eta = c_eta sqrt(K)``, ..."""

    c_alpha: float
    c_eta: float
    c_beta: float
    c_theta: float
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ParameterError("horizon K must be at least 1")
        if not (0.0 < self.c_alpha < 1.0):
            raise ParameterError("c_alpha must lie in (0, 1)")
        if min(self.c_eta, self.c_beta, self.c_theta) <= 0:
            raise ParameterError("c_eta, c_beta and c_theta must be positive")

    def with_horizon(self, K):
        return replace(self, K=int(K))


@dataclass(frozen=True)
class ScheduleValidity:
    M: float
    C_x: float
    theta: float
    p: float
    q: float
    eta_condition_ok: bool
    beta_condition_ok: bool
    cx_positive: bool

    @property
    def valid(self):
        return self.eta_condition_ok and self.beta_condition_ok and self.cx_positive


@dataclass(frozen=True)
class SolverState:
    x: np.ndarray
    mu: np.ndarray
    m: np.ndarray
    x_prev: np.ndarray
    r: int = 0
    grad_evals: int = 1


def eta_threshold(L, c_alpha, c_theta):
    """Lower bound on ``c_eta`` required by the schedule."""
    return 3.0 * L + 2.0 / c_alpha + 2.0 * c_theta / c_alpha**2


def schedule(constants, L, spectral):
    """Realize the horizon-dependent parameters and evaluate their validity.

    Parameters are always returned; the flags report whether the sufficient
    conditions for the convergence guarantee hold.
    """
    c = constants
    if L <= 0:
        raise ParameterError("L must be positive")
    sqrtK = math.sqrt(c.K)
    alpha = c.c_alpha / sqrtK
    eta = c.c_eta * sqrtK
    beta = c.c_beta * sqrtK
    theta = c.c_theta / sqrtK
    lam = spectral.lambda_min_nonzero
    bn = spectral.b_norm
    M = c.c_eta / 2 - 1 / c.c_alpha - c.c_theta / c.c_alpha**2 - 1.5 * L
    C_x = M - 6 * c.c_eta**2 * bn**2 / (c.c_beta * lam) - 6 / (c.c_beta * lam * (1 - c.c_alpha) ** 2)
    p = alpha / 2 + 6 * alpha**2 / (beta * lam * (1 - alpha) ** 2)
    q = (p + theta) / alpha
    eta_ok = c.c_eta > eta_threshold(L, c.c_alpha, c.c_theta)
    beta_ok = M > 0 and c.c_beta > 6 / (lam * M) * (c.c_eta**2 * bn**2 + 1 / (1 - c.c_alpha) ** 2)
    validity = ScheduleValidity(M=M, C_x=C_x, theta=theta, p=p, q=q, eta_condition_ok=eta_ok,
                                beta_condition_ok=beta_ok, cx_positive=C_x > 0)
    if not validity.valid:
        log.warning("schedule constants violate the sufficient conditions "
                    "(eta_ok=%s beta_ok=%s C_x=%.3g)", eta_ok, beta_ok, C_x)
    return MalmParams(alpha=alpha, eta=eta, beta=beta), validity


def schedule_for(problem, constants):
    """:func:`schedule` with spectral data computed from the problem."""
    spec = spectral_info(problem.A, constants.c_beta / constants.c_eta)
    return schedule(constants, problem.L, spec)


def _guard(state):
    x, mu = state.x, state.mu
    nx = math.sqrt(float(x @ x))
    nmu = math.sqrt(float(mu @ mu))
    if not (nx <= DIVERGENCE_BOUND and nmu <= DIVERGENCE_BOUND):
        raise DivergenceError(state.r, f"iterates diverged at r={state.r} "
                              f"(|x|={nx:.3g}, |mu|={nmu:.3g})")
    return state


def malm_init(problem, x0, rng):
    """``mu^0 = 0`` and ``m^0 = g(x^0; xi^0)``; one oracle call."""
    x0 = np.array(as_vector(x0, problem.d, "x0"), dtype=float)
    m0 = _draw(problem, x0, rng)
    return SolverState(x=x0, mu=np.zeros(problem.m), m=np.asarray(m0, dtype=float),
                       x_prev=x0, r=0, grad_evals=1)


def _primal_dual(state, eta, beta, problem):
    A, b = problem.A, problem.b
    x, mu = state.x, state.mu
    x_new = x - (state.m + A.T @ (mu + beta * (A @ x - b))) / eta
    mu_new = mu + beta * (A @ x_new - b)
    return x_new, mu_new


def malm_step(state, params, problem, rng):
    """One iteration: primal step with the previous momentum, dual ascent, momentum refresh."""
    x_new, mu_new = _primal_dual(state, params.eta, params.beta, problem)
    g = _draw(problem, x_new, rng)
    a = params.alpha
    m_new = (1.0 - a) * state.m + a * g
    return _guard(SolverState(x=x_new, mu=mu_new, m=m_new, x_prev=state.x,
                              r=state.r + 1, grad_evals=state.grad_evals + 1))


def storm_alm_step(state, params, problem, rng):
    """MALM primal/dual updates with the recursive estimator (two oracle calls)."""
    x_new, mu_new = _primal_dual(state, params.eta, params.beta, problem)
    g_new, g_old = _draw_shared(problem, x_new, state.x, rng)
    m_new = g_new + (1.0 - params.alpha) * (state.m - g_old)
    return _guard(SolverState(x=x_new, mu=mu_new, m=m_new, x_prev=state.x,
                              r=state.r + 1, grad_evals=state.grad_evals + 2))


def spd_step(state, stepsizes, problem, rng):
    """Stochastic primal-dual step ``x+ = x - tau (g(x) + A^T mu)``, ``mu+ = mu + rho (A x+ - b)``.

    ``state.m`` holds the fresh sample ``g(x; xi)`` drawn at the current
    point (by :func:`malm_init` or the previous step).
    """
    tau, rho = stepsizes
    if tau < 0 or rho <= 0:
        raise ParameterError("SPD needs tau >= 0 and rho > 0")
    A, b = problem.A, problem.b
    x_new = state.x - tau * (state.m + A.T @ state.mu)
    mu_new = state.mu + rho * (A @ x_new - b)
    g = _draw(problem, x_new, rng)
    return _guard(SolverState(x=x_new, mu=mu_new, m=np.asarray(g, dtype=float), x_prev=state.x,
                              r=state.r + 1, grad_evals=state.grad_evals + 1))


def _stepper(solver, params, spd_steps):
    if solver == "malm":
        return lambda s, p, rng: malm_step(s, params, p, rng)
    if solver == "storm_alm":
        return lambda s, p, rng: storm_alm_step(s, params, p, rng)
    if solver == "spd":
        steps = spd_steps if spd_steps is not None else (1.0 / params.eta, params.beta)
        return lambda s, p, rng: spd_step(s, steps, p, rng)
    raise ParameterError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


def run_solver(problem, solver, constants, x0=None, seed=0, trial=0, record_every=10,
               n_select=1, spd_steps=None, timing=True, params=None, callback=None):
    """Run `solver` for ``constants.K`` iterations and return a :class:`Trace`.

    The oracle stream is ``(seed, trial)``; reservoir selection draws from an
    independent child stream so the trajectory does not depend on
    `n_select`. Records are taken at ``r = 0, record_every, 2*record_every,
    ...`` and always at ``r = K``. `elapsed_ns` counts solver time only
    (metric evaluation excluded) and is zero when `timing` is off.
    `callback(old_state, new_state)` sees every transition.
    """
    if record_every < 1:
        raise ParameterError("record_every must be positive")
    K = constants.K
    if params is None:
        params, _ = schedule_for(problem, constants)
    step = _stepper(solver, params, spd_steps)
    oracle = RngStream(seed, trial)
    select = RngStream(seed, trial, (1,))
    reservoirs = [Reservoir(select.substream(j)) for j in range(n_select)]
    x0 = np.zeros(problem.d) if x0 is None else x0
    clock = time.perf_counter_ns if timing else (lambda: 0)

    t0 = clock()
    state = malm_init(problem, x0, oracle)
    elapsed = clock() - t0
    trace = Trace(records=[make_record(problem, state, elapsed)], solver=solver, seed=seed,
                  trial=trial, constants=constants, params=params)
    try:
        for _ in range(K):
            t0 = clock()
            new = step(state, problem, oracle)
            elapsed += clock() - t0
            if callback is not None:
                callback(state, new)
            state = new
            for res in reservoirs:
                res.offer(state.r, state.x, state.mu)
            if state.r % record_every == 0 or state.r == K:
                trace.records.append(make_record(problem, state, elapsed))
    except DivergenceError as exc:
        trace.diverged_at = exc.r
        trace.x, trace.mu = state.x, state.mu
        exc.trace = trace
        raise
    trace.x, trace.mu = state.x, state.mu
    trace.selections = [res.item for res in reservoirs]
    return trace


def malm_run(problem, constants, x0=None, seed=0, record_every=10, **kwargs):
    """Algorithm driver for MALM; see :func:`run_solver`."""
    return run_solver(problem, "malm", constants, x0=x0, seed=seed, record_every=record_every,
                      **kwargs)


def constants_dict(constants):
    return asdict(constants)
