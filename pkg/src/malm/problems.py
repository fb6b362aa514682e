"""Linearly constrained stochastic test problems.

Two families are provided:

* ``regression``: finite-sum robust regression with the exponential squared
  loss ``Phi(t) = 1 - exp(-t^2)``, sampled one row per oracle call;
* ``quadratic``: ``0.5 x^T Q x + c^T x`` with an additive Gaussian oracle
  whose variance is exactly ``sigma^2``, plus its analytic KKT pair.

Problems serialize to a small versioned container (magic ``MALMPB1``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import (
    DimensionError,
    FormatError,
    IllPosedConstraintError,
    NumericError,
)
from .numerics import RngStream, as_matrix, as_vector, spectral_norm

__all__ = [
    "ConstrainedProblem",
    "GradientSample",
    "REGRESSION",
    "QUADRATIC",
    "generate_regression",
    "generate_quadratic",
    "make_quadratic",
    "make_regression",
    "objective",
    "full_gradient",
    "stochastic_gradient",
    "per_sample_gradients",
    "estimate_smoothness",
    "estimate_sigma",
    "save_problem",
    "load_problem",
    "MAGIC",
]

REGRESSION = "regression"
QUADRATIC = "quadratic"
MAGIC = b"MALMPB1\n"

# |Phi'(t)| = |2 t exp(-t^2)| <= sqrt(2) exp(-1/2)
PHI_PRIME_MAX = math.sqrt(2.0) * math.exp(-0.5)


@dataclass(frozen=True, eq=False)
class ConstrainedProblem:
    """``min f(x) s.t. Ax = b`` with a stochastic gradient oracle.

    Only the arrays relevant to `family` are populated: ``D, y, x_gen`` for
    regression, ``Q, c`` for quadratics. ``x_star``/``mu_star`` hold a known
    KKT pair when one is available.
    """

    family: str
    A: np.ndarray
    b: np.ndarray
    L: float
    f_lower: float
    sigma: float
    D: np.ndarray | None = None
    y: np.ndarray | None = None
    x_gen: np.ndarray | None = None
    Q: np.ndarray | None = None
    c: np.ndarray | None = None
    x_feas: np.ndarray | None = None
    x_star: np.ndarray | None = None
    mu_star: np.ndarray | None = None
    seed: int = -1
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def N(self):
        return 0 if self.D is None else self.D.shape[0]


@dataclass
class GradientSample:
    value: np.ndarray
    draws_consumed: int = 1


# ---------------------------------------------------------------------------
# construction


def _gaussian_constraints(gen, m, d):
    A = gen.standard_normal((m, d))
    x_feas = gen.standard_normal(d)
    return A, A @ x_feas, x_feas


def make_regression(D, y, A, b, x_gen=None, x_feas=None, sigma=None, seed=-1):
    """Wrap explicit regression data as a problem; `L` comes from the data."""
    D = as_matrix(D, "D")
    A = as_matrix(A, "A")
    y = as_vector(y, D.shape[0], "y")
    b = as_vector(b, A.shape[0], "b")
    if D.shape[1] != A.shape[1]:
        raise DimensionError("D and A disagree on the dimension d")
    L = 2.0 * spectral_norm(D) ** 2 / D.shape[0]
    prob = ConstrainedProblem(
        family=REGRESSION, A=A, b=b, L=L, f_lower=0.0, sigma=0.0 if sigma is None else float(sigma),
        D=D, y=y, x_gen=None if x_gen is None else as_vector(x_gen, D.shape[1], "x_gen"),
        x_feas=x_feas, seed=seed,
    )
    return prob


def generate_regression(d, N, m, sparsity=0.05, label_noise_std=0.1, seed=0,
                        estimate_noise=True):
    """Synthetic constrained regression instance.

    Features and the constraint matrix are standard Gaussian; the ground
    truth has ``ceil(sparsity * d)`` nonzero Gaussian entries and
    ``b = A x_feas`` for a Gaussian ``x_feas``, so the feasible set is
    nonempty.
    """
    if not (0 < m < d):
        raise IllPosedConstraintError(f"need 0 < m < d, got m={m}, d={d}")
    if N <= 0:
        raise ValueError("N must be positive")
    if not (0 < sparsity <= 1):
        raise ValueError("sparsity must lie in (0, 1]")
    gen = RngStream(seed, 0).generator
    D = gen.standard_normal((N, d))
    k = math.ceil(sparsity * d)
    x_gen = np.zeros(d)
    support = gen.choice(d, size=k, replace=False)
    x_gen[support] = gen.standard_normal(k)
    y = D @ x_gen + label_noise_std * gen.standard_normal(N)
    A, b, x_feas = _gaussian_constraints(gen, m, d)
    prob = make_regression(D, y, A, b, x_gen=x_gen, x_feas=x_feas, seed=seed)
    prob.meta.update(sparsity=sparsity, label_noise_std=label_noise_std)
    if estimate_noise:
        prob = replace(prob, sigma=estimate_sigma(prob, RngStream(seed, 1)))
    return prob


def make_quadratic(Q, c, A, b, sigma=0.0, seed=-1, x_feas=None):
    """Quadratic ``0.5 x^T Q x + c^T x`` with additive-noise oracle.

    The KKT pair is solved from the saddle-point system when that system is
    nonsingular; otherwise ``x_star``/``mu_star`` are left empty.
    """
    Q = as_matrix(Q, "Q")
    A = as_matrix(A, "A")
    d = A.shape[1]
    if Q.shape != (d, d):
        raise DimensionError(f"Q must be {d}x{d}")
    c = as_vector(c, d, "c")
    b = as_vector(b, A.shape[0], "b")
    Q = 0.5 * (Q + Q.T)
    ev = np.linalg.eigvalsh(Q)
    m = A.shape[0]
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    x_star = mu_star = None
    try:
        if np.linalg.cond(K) < 1e12:
            sol = np.linalg.solve(K, np.concatenate([-c, b]))
            x_star, mu_star = sol[:d], sol[d:]
    except np.linalg.LinAlgError:
        pass
    # lower bound on the affine set is not needed by any algorithm; use the
    # unconstrained minimum when Q is positive definite
    if ev[0] > 0:
        f_lower = float(-0.5 * c @ np.linalg.solve(Q, c))
    else:
        f_lower = -math.inf
    return ConstrainedProblem(
        family=QUADRATIC, A=A, b=b, L=float(max(abs(ev[0]), abs(ev[-1]))),
        f_lower=f_lower, sigma=float(sigma), Q=Q, c=c, x_feas=x_feas,
        x_star=x_star, mu_star=mu_star, seed=seed,
    )


def generate_quadratic(d, m, condition=10.0, sigma=0.0, seed=0):
    """Random strongly convex quadratic with eigenvalues spread over [1, condition]."""
    if not (0 < m < d):
        raise IllPosedConstraintError(f"need 0 < m < d, got m={m}, d={d}")
    if condition < 1:
        raise ValueError("condition must be >= 1")
    gen = RngStream(seed, 0).generator
    U, _ = np.linalg.qr(gen.standard_normal((d, d)))
    eig = np.geomspace(1.0, condition, d) if d > 1 else np.array([1.0])
    Q = (U * eig) @ U.T
    c = gen.standard_normal(d)
    A, b, x_feas = _gaussian_constraints(gen, m, d)
    prob = make_quadratic(Q, c, A, b, sigma=sigma, seed=seed, x_feas=x_feas)
    if prob.x_star is None:
        raise NumericError("singular KKT system")
    prob.meta.update(condition=condition)
    return prob


# ---------------------------------------------------------------------------
# oracles


def _check_x(problem, x):
    return as_vector(x, problem.d, "x")


def objective(problem, x):
    x = _check_x(problem, x)
    if problem.family == REGRESSION:
        r = problem.D @ x - problem.y
        return float(np.mean(-np.expm1(-r * r)))
    return float(0.5 * x @ (problem.Q @ x) + problem.c @ x)


def full_gradient(problem, x):
    """Exact gradient. Used for metrics only; never counted as an oracle call."""
    x = _check_x(problem, x)
    if problem.family == REGRESSION:
        r = problem.D @ x - problem.y
        w = 2.0 * r * np.exp(-r * r)
        return problem.D.T @ w / problem.N
    return problem.Q @ x + problem.c


def per_sample_gradients(problem, x):
    """Rows ``2 r_i exp(-r_i^2) a_i`` of the finite sum (regression only)."""
    r = problem.D @ x - problem.y
    return (2.0 * r * np.exp(-r * r))[:, None] * problem.D


def stochastic_gradient(problem, x, rng):
    """One unbiased oracle draw ``g(x; xi)``."""
    x = _check_x(problem, x)
    return GradientSample(_draw(problem, x, rng), 1)


def _draw(problem, x, rng):
    # unchecked hot path used by the solvers
    if problem.family == REGRESSION:
        i = rng.integers(problem.N)
        a = problem.D[i]
        r = a @ x - problem.y[i]
        return (2.0 * r * math.exp(-r * r)) * a
    g = problem.Q @ x + problem.c
    if problem.sigma > 0:
        g = g + rng.normal(problem.sigma / math.sqrt(problem.d), problem.d)
    return g


def _draw_shared(problem, x_new, x_old, rng):
    # one sample xi evaluated at two points (recursive-momentum estimator)
    if problem.family == REGRESSION:
        i = rng.integers(problem.N)
        a = problem.D[i]
        r1 = a @ x_new - problem.y[i]
        r0 = a @ x_old - problem.y[i]
        return (2.0 * r1 * math.exp(-r1 * r1)) * a, (2.0 * r0 * math.exp(-r0 * r0)) * a
    g1 = problem.Q @ x_new + problem.c
    g0 = problem.Q @ x_old + problem.c
    if problem.sigma > 0:
        z = rng.normal(problem.sigma / math.sqrt(problem.d), problem.d)
        g1, g0 = g1 + z, g0 + z
    return g1, g0


def estimate_smoothness(problem):
    """Global Lipschitz constant of the exact gradient.

    For the regression loss ``|Phi''| <= 2`` gives ``L = 2 sigma_max(D)^2 / N``.
    """
    if problem.family == REGRESSION:
        return 2.0 * spectral_norm(problem.D) ** 2 / problem.N
    ev = np.linalg.eigvalsh(problem.Q)
    return float(max(abs(ev[0]), abs(ev[-1])))


def estimate_sigma(problem, rng, n_points=20, n_draws=10_000):
    """Largest empirical oracle variance ``E||g - grad f||^2`` over random points."""
    if problem.family == QUADRATIC:
        return problem.sigma
    gen = rng.generator
    worst = 0.0
    for _ in range(n_points):
        x = gen.standard_normal(problem.d)
        grad = full_gradient(problem, x)
        idx = gen.integers(problem.N, size=n_draws)
        r = problem.D[idx] @ x - problem.y[idx]
        G = (2.0 * r * np.exp(-r * r))[:, None] * problem.D[idx]
        worst = max(worst, float(np.mean(np.sum((G - grad) ** 2, axis=1))))
    return math.sqrt(worst)


# ---------------------------------------------------------------------------
# serialization
#
# layout: MAGIC, one JSON header line, then the arrays listed in the header
# as raw little-endian float64 in header order.

_ARRAYS = ("A", "b", "D", "y", "x_gen", "Q", "c", "x_feas", "x_star", "mu_star")


def save_problem(problem, path):
    arrays = {k: getattr(problem, k) for k in _ARRAYS if getattr(problem, k) is not None}
    header = {
        "version": 1,
        "family": problem.family,
        "d": problem.d,
        "m": problem.m,
        "N": problem.N,
        "L": problem.L,
        "f_lower": problem.f_lower,
        "sigma": problem.sigma,
        "seed": problem.seed,
        "meta": problem.meta,
        "arrays": [[k, list(v.shape)] for k, v in arrays.items()],
    }
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return path


def load_problem(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise FormatError(f"{path}: not a MALMPB1 problem file")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: corrupt header") from exc
        blob = fh.read()
    arrays = {}
    offset = 0
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated array {name}")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape).astype(float)
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: trailing bytes after arrays")
    f_lower = header["f_lower"]
    return ConstrainedProblem(
        family=header["family"], L=header["L"], f_lower=-math.inf if f_lower is None else f_lower,
        sigma=header["sigma"], seed=header["seed"], meta=header.get("meta", {}), **arrays,
    )
