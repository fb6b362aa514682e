"""Dense linear-algebra kernels, spectral quantities and seeded RNG streams."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateMatrixError, DimensionError, NumericError

__all__ = [
    "as_matrix",
    "as_vector",
    "RngStream",
    "SpectralInfo",
    "spectral_norm",
    "smallest_nonzero_eigenvalue",
    "apply_B",
    "b_matrix_norm",
    "spectral_info",
]


def as_matrix(A, name="A"):
    """Return `A` as a finite 2-D float64 array or raise."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    if A.ndim != 2 or A.size == 0:
        raise DimensionError(f"{name} must be a nonempty matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericError(f"{name} has non-finite entries")
    return A


def as_vector(v, n=None, name="v"):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {n}")
    return v


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Streams with the same key replay identical draws. Distinct ``stream_id``
    values are derived through :class:`numpy.random.SeedSequence` spawn keys,
    so trials and auxiliary streams are independent by construction.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be nonnegative")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, k):
        """Independent child stream; does not advance this one."""
        return RngStream(self.seed, self.stream_id, (*self.path, int(k)))

    # thin pass-throughs used on hot paths
    def integers(self, high):
        return self.generator.integers(high)

    def normal(self, scale=1.0, size=None):
        return self.generator.normal(0.0, scale, size)

    def random(self, size=None):
        return self.generator.random(size)


@dataclass(frozen=True)
class SpectralInfo:
    op_norm_A: float
    lambda_min_nonzero: float
    b_norm: float
    beta_over_eta: float
    lambda_max: float


def spectral_norm(A, tol=1e-12, max_iter=10_000, seed=0):
    """Largest singular value of `A` by power iteration on ``A^T A``.

    Stops when the relative change of the Rayleigh quotient drops below
    `tol`, or after `max_iter` sweeps.
    """
    A = as_matrix(A)
    if not np.any(A):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # started in the null space
            v = rng.standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    # one Rayleigh quotient at the converged vector is more accurate than lam
    return float(np.sqrt(max(v @ (A.T @ (A @ v)), lam, 0.0)))


def _gram_eigenvalues(A):
    # A A^T is m x m; its nonzero spectrum equals that of A^T A
    A = as_matrix(A)
    return np.linalg.eigvalsh(A @ A.T), A


def smallest_nonzero_eigenvalue(A, zero_tol=1e-10):
    """Smallest eigenvalue of ``A^T A`` above ``zero_tol * lambda_max``."""
    ev, _ = _gram_eigenvalues(A)
    lam_max = ev[-1]
    keep = ev[ev > zero_tol * lam_max] if lam_max > 0 else ev[:0]
    if keep.size == 0:
        raise DegenerateMatrixError("all eigenvalues of A A^T are below the zero threshold")
    return float(keep[0])


def apply_B(v, A, beta, eta):
    """Apply ``B = I - (beta/eta) A^T A`` to `v` without forming ``A^T A``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    v = as_vector(v, A.shape[1])
    return v - (beta / eta) * (A.T @ (A @ v))


def b_matrix_norm(A, beta, eta, zero_tol=1e-10):
    """Operator norm of ``I - (beta/eta) A^T A`` from the spectrum of ``A A^T``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    ev, A = _gram_eigenvalues(A)
    lam_max = max(ev[-1], 0.0)
    nonzero = ev[ev > zero_tol * lam_max] if lam_max > 0 else ev[:0]
    rho = beta / eta
    vals = list(np.abs(1.0 - rho * nonzero))
    if A.shape[1] > nonzero.size:
        # A^T A carries eigenvalue 0 on the null space of A
        vals.append(1.0)
    return float(max(vals))


def spectral_info(A, beta_over_eta, zero_tol=1e-10):
    """Bundle the spectral constants used by the parameter schedule."""
    ev, A = _gram_eigenvalues(A)
    lam_max = float(max(ev[-1], 0.0))
    return SpectralInfo(
        op_norm_A=spectral_norm(A),
        lambda_min_nonzero=smallest_nonzero_eigenvalue(A, zero_tol),
        b_norm=b_matrix_norm(A, beta_over_eta, 1.0, zero_tol),
        beta_over_eta=float(beta_over_eta),
        lambda_max=lam_max,
    )
