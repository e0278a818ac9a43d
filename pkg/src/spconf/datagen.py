"""Sampling confounded covariate/confounder fields and responses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DomainError, StructuralError
from .numerics import (
    DEFAULT_NUGGET,
    CorrelationKernel,
    cholesky_factor,
    correlation_matrix,
    graph_laplacian,
    validate_locations,
)


@dataclass(frozen=True)
class ConfoundedFieldSpec:
    """Joint law of the observed covariate X and unobserved confounder Z.

    ``Cov(X) = sigma2_c R_c + sigma2_u R_u``, ``Cov(Z) = sigma2_z R_c`` and
    ``Cov(X, Z) = rho sigma_c sigma_z R_c``.
    """

    sigma2_c: float
    sigma2_u: float
    sigma2_z: float
    rho: float
    kernel_c: CorrelationKernel
    kernel_u: CorrelationKernel
    mu_x: float = 0.0
    mu_z: float = 0.0

    def __post_init__(self):
        if not self.sigma2_c > 0:
            raise DomainError("sigma2_c must be > 0")
        if not self.sigma2_u >= 0:
            raise DomainError("sigma2_u must be >= 0")
        if not self.sigma2_z > 0:
            raise DomainError("sigma2_z must be > 0")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError("rho must lie in [-1, 1]")
        for v in (self.sigma2_c, self.sigma2_u, self.sigma2_z, self.rho, self.mu_x, self.mu_z):
            if not math.isfinite(v):
                raise DomainError("field parameters must be finite")

    @property
    def p_c(self):
        return self.sigma2_c / (self.sigma2_c + self.sigma2_u)

    def correlations(self, locs, nugget=DEFAULT_NUGGET):
        """``(R_c, R_u)`` at ``locs``, each with ``nugget`` on the diagonal."""
        return (
            correlation_matrix(locs, self.kernel_c, nugget),
            correlation_matrix(locs, self.kernel_u, nugget),
        )

    def factors(self, locs, nugget=DEFAULT_NUGGET):
        """Lower Cholesky factors of ``(R_c, R_u)``; reuse across replicates."""
        r_c, r_u = self.correlations(locs, nugget)
        return cholesky_factor(r_c, "R_c"), cholesky_factor(r_u, "R_u")


@dataclass(frozen=True)
class GeneratingCoefficients:
    """``y = beta0 + beta_x x + beta_z z + eps`` with ``eps ~ N(0, sigma2 I)``.

    ``sigma2 = 0`` is accepted so that noiseless responses can be built for
    exact checks.
    """

    beta0: float
    beta_x: float
    beta_z: float
    sigma2: float

    def __post_init__(self):
        for v in (self.beta0, self.beta_x, self.beta_z, self.sigma2):
            if not math.isfinite(v):
                raise DomainError("coefficients must be finite")
        if self.sigma2 < 0:
            raise DomainError("sigma2 must be >= 0")


@dataclass
class Dataset:
    locs: np.ndarray
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    truth: GeneratingCoefficients
    master_seed: int | None = None
    replicate: int | None = None


def sample_confounded_fields(spec: ConfoundedFieldSpec, locs, rng, nugget=DEFAULT_NUGGET, factors=None):
    """Draw one realization ``(x, z)`` from three independent latent fields.

    ``x = mu_x + sigma_c W_c + sigma_u W_u`` and
    ``z = mu_z + sigma_z (rho W_c + sqrt(1 - rho^2) W_c')`` with
    ``W_c, W_c' ~ N(0, R_c)`` and ``W_u ~ N(0, R_u)`` independent. The joint
    covariance is positive semi-definite for every ``|rho| <= 1``.

    Parameters
    ----------
    factors : tuple of ndarray, optional
        Precomputed ``spec.factors(locs, nugget)``; avoids refactorizing.
    """
    locs = validate_locations(locs)
    n = locs.shape[0]
    l_c, l_u = factors if factors is not None else spec.factors(locs, nugget)
    if l_c.shape != (n, n) or l_u.shape != (n, n):
        raise DomainError("factor shapes do not match locations")
    g = rng.standard_normal((3, n))
    w_c = l_c @ g[0]
    w_c2 = l_c @ g[1]
    w_u = l_u @ g[2]
    x = spec.mu_x + math.sqrt(spec.sigma2_c) * w_c + math.sqrt(spec.sigma2_u) * w_u
    z = spec.mu_z + math.sqrt(spec.sigma2_z) * (spec.rho * w_c + math.sqrt(1.0 - spec.rho**2) * w_c2)
    return x, z


def generate_response(x, z, coeffs: GeneratingCoefficients, rng):
    """Response ``beta0 + beta_x x + beta_z z + eps``; inputs are not modified."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape or x.ndim != 1:
        raise DomainError("x and z must be 1-D vectors of equal length")
    eps = rng.standard_normal(x.shape[0]) * math.sqrt(coeffs.sigma2)
    return coeffs.beta0 + coeffs.beta_x * x + coeffs.beta_z * z + eps


def conditional_mean_z_given_x(x, spec: ConfoundedFieldSpec, locs, nugget=DEFAULT_NUGGET):
    """``E(Z | X = x) = mu_z + rho sigma_c sigma_z R_c^T (sigma2_c R_c + sigma2_u R_u)^-1 (x - mu_x)``."""
    x = np.asarray(x, dtype=float)
    r_c, r_u = spec.correlations(locs, nugget)
    cov_x = spec.sigma2_c * r_c + spec.sigma2_u * r_u
    chol = cholesky_factor(cov_x, "Cov(X)")
    sol = linalg.cho_solve((chol, True), x - spec.mu_x)
    scale = spec.rho * math.sqrt(spec.sigma2_c * spec.sigma2_z)
    return spec.mu_z + scale * (r_c.T @ sol)


def smallest_nonzero_eigenvector(q, reference=None, tol=1e-9):
    """Unit eigenvector of a connected-graph Laplacian for its smallest non-zero eigenvalue.

    When that eigenvalue is repeated (e.g. square lattices) the eigenspace is
    not a single direction; the returned vector is the normalized projection
    of ``reference`` onto it, which makes the choice reproducible. The sign
    is fixed so that the vector correlates positively with ``reference``.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    lam, vecs = np.linalg.eigh(q)
    scale = max(abs(lam[-1]), 1.0)
    nonzero = np.flatnonzero(lam > tol * scale)
    if nonzero.size != n - 1:
        raise StructuralError("Laplacian must have exactly one zero eigenvalue (connected graph)")
    lam2 = lam[nonzero[0]]
    block = vecs[:, np.abs(lam - lam2) <= 1e-8 * scale]
    if reference is None:
        reference = np.arange(n, dtype=float)
    reference = np.asarray(reference, dtype=float) - np.mean(reference)
    v = block @ (block.T @ reference)
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        v = block[:, 0]
        norm = np.linalg.norm(v)
    v = v / norm
    v = v - v.mean()
    v /= np.linalg.norm(v)
    return v, float(lam2)


def areal_confounder(mode, rng=None, q=None, sd=0.09, n=None, reference=None):
    """Fixed areal confounder ``z``.

    ``mode="random"`` draws iid ``N(0, sd^2)`` values (needs ``rng`` and ``n``
    or ``q``); ``mode="eigenvector"`` returns the unit eigenvector of ``q``
    for its smallest non-zero eigenvalue.
    """
    if mode == "random":
        if n is None:
            if q is None:
                raise DomainError("random mode needs n or q")
            n = q.shape[0]
        return rng.standard_normal(n) * sd
    if mode == "eigenvector":
        if q is None:
            raise DomainError("eigenvector mode needs the graph Laplacian q")
        return smallest_nonzero_eigenvector(q, reference)[0]
    raise DomainError(f"unknown areal covariate mode {mode!r}")


def areal_covariate(z, rng, slope=0.5, sd=0.01):
    """``x = slope * z + eps_x`` with ``eps_x ~ N(0, sd^2)`` iid."""
    z = np.asarray(z, dtype=float)
    return slope * z + rng.standard_normal(z.shape[0]) * sd


def areal_covariate_pair(mode, rng, q=None, z_sd=0.09, x_slope=0.5, x_sd=0.01, reference=None):
    """Return ``(z, x)`` for the areal setting; ``z`` is normally held fixed by the caller."""
    if q is not None:
        graph_laplacian(-q + np.diag(np.diag(q)))  # validates connectivity
    z = areal_confounder(mode, rng, q=q, sd=z_sd, reference=reference)
    return z, areal_covariate(z, rng, x_slope, x_sd)
