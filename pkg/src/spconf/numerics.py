"""Correlation kernels, factorizations and precision-metric geometry.

All other modules consume the helpers here. Vectors are 1-D numpy arrays and
locations are ``(n, 2)`` arrays of planar coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg
from scipy.sparse.csgraph import connected_components

from ._backend import kernels
from .errors import ConditioningError, DomainError, StructuralError

DEFAULT_NUGGET = 1e-8
LOW_FREQUENCY_CUTOFF = 1.0


def _check_range(theta, name="theta"):
    if not (math.isfinite(theta) and theta > 0):
        raise DomainError(f"{name} must be finite and > 0, got {theta!r}")


def _half_integer_order(nu):
    k = nu - 0.5
    if k >= 0 and k == int(k) and k <= 20:
        return int(k)
    return None


def _matern_half_integer(x, k):
    # exp(-x) k!/(2k)! sum_j (k+j)!/(j!(k-j)!) (2x)^(k-j)
    poly = np.zeros_like(x)
    for j in range(k + 1):
        coef = math.factorial(k + j) / (math.factorial(j) * math.factorial(k - j))
        poly = poly + coef * (2.0 * x) ** (k - j)
    return np.exp(-x) * poly * math.factorial(k) / math.factorial(2 * k)


def matern_correlation(d: ArrayLike, theta: float, nu: float):
    """Matern correlation ``C(d; theta, nu)`` with argument ``2 sqrt(nu) d / theta``.

    Half-integer smoothness uses the exact polynomial-times-exponential form;
    other orders call the Bessel kernel of the active backend. ``C(0) = 1``.
    """
    _check_range(theta)
    _check_range(nu, "nu")
    arr = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError("distances must be finite and >= 0")
    k = _half_integer_order(nu)
    if k is not None:
        out = _matern_half_integer(2.0 * math.sqrt(nu) * arr / theta, k)
    else:
        out = kernels.matern_values(arr.ravel(), theta, nu).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def exponential_correlation(d: ArrayLike, theta: float):
    """Exponential correlation ``exp(-d / theta)``."""
    _check_range(theta)
    arr = np.asarray(d, dtype=float)
    if np.any(arr < 0):
        raise DomainError("distances must be >= 0")
    out = np.exp(-arr / theta)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CorrelationKernel:
    """Isotropic correlation function.

    ``family`` is ``"matern"`` (needs ``nu``) or ``"exponential"``. The Matern
    family at ``nu = 0.5`` is ``exp(-sqrt(2) d / theta)``, which differs from
    the exponential family's ``exp(-d / theta)``; the two are never
    converted into one another.
    """

    family: str
    theta: float
    nu: float | None = None

    def __post_init__(self):
        if self.family not in ("matern", "exponential"):
            raise DomainError(f"unknown kernel family {self.family!r}")
        _check_range(self.theta)
        if self.family == "matern":
            if self.nu is None:
                raise DomainError("matern kernel needs nu")
            _check_range(self.nu, "nu")
        elif self.nu is not None:
            raise DomainError("exponential kernel takes no nu")

    @classmethod
    def matern(cls, theta, nu):
        return cls("matern", float(theta), float(nu))

    @classmethod
    def exponential(cls, theta):
        return cls("exponential", float(theta))

    def __call__(self, d):
        if self.family == "matern":
            return matern_correlation(d, self.theta, self.nu)
        return exponential_correlation(d, self.theta)


def validate_locations(locs: ArrayLike) -> NDArray:
    """Return locations as a float ``(n, 2)`` array, checking n >= 2 and finiteness."""
    arr = np.asarray(locs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError(f"locations must have shape (n, 2), got {arr.shape}")
    if arr.shape[0] < 2:
        raise DomainError("need at least 2 locations")
    if not np.all(np.isfinite(arr)):
        raise DomainError("locations must be finite")
    return arr


def distance_matrix(locs: ArrayLike) -> NDArray:
    locs = validate_locations(locs)
    diff = locs[:, None, :] - locs[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def correlation_matrix(locs: ArrayLike, kernel: CorrelationKernel, nugget: float = 0.0) -> NDArray:
    """Correlation matrix ``kernel(|s_i - s_j|) + nugget * I``.

    Only the upper triangle is evaluated and mirrored, so the result is
    exactly symmetric. No factorization is attempted; use
    :func:`cholesky_factor` to validate positive definiteness.
    """
    if not (nugget >= 0 and math.isfinite(nugget)):
        raise DomainError("nugget must be finite and >= 0")
    dist = distance_matrix(locs)
    n = dist.shape[0]
    iu = np.triu_indices(n, k=1)
    vals = np.asarray(kernel(dist[iu]), dtype=float)
    out = np.eye(n) * (1.0 + nugget)
    out[iu] = vals
    out[(iu[1], iu[0])] = vals
    return out


def cholesky_factor(matrix: NDArray, what: str = "matrix") -> NDArray:
    """Lower Cholesky factor, raising :class:`ConditioningError` on failure."""
    try:
        return linalg.cholesky(matrix, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        eig = float(np.linalg.eigvalsh((matrix + matrix.T) / 2)[0]) if np.all(np.isfinite(matrix)) else float("nan")
        raise ConditioningError(f"Cholesky factorization of {what} failed", eig) from None


@dataclass(frozen=True)
class SpectralDecomposition:
    """``matrix = U diag(D) U^T`` with ``D`` sorted descending."""

    U: NDArray
    D: NDArray

    @classmethod
    def of(cls, matrix):
        vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2)
        order = np.argsort(vals)[::-1]
        return cls(vecs[:, order], vals[order])

    def reconstruct(self):
        return (self.U * self.D) @ self.U.T

    def low_frequency(self, cutoff=LOW_FREQUENCY_CUTOFF):
        """Boolean mask of eigenvectors whose eigenvalue is below ``cutoff``.

        The default cutoff of 1 is an ad-hoc convention for "low frequency",
        used for diagnostics only.
        """
        return self.D < cutoff


@dataclass(frozen=True)
class PrecisionMetric:
    """Symmetric positive-definite matrix inducing ``<a, b> = a^T M b``."""

    matrix: NDArray
    _chol: NDArray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError(f"precision matrix must be square, got {m.shape}")
        scale = max(float(np.max(np.abs(m))), np.finfo(float).tiny)
        if np.max(np.abs(m - m.T)) > 1e-10 * scale:
            raise DomainError("precision matrix is not symmetric")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "_chol", cholesky_factor(m, "precision matrix"))

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @classmethod
    def from_covariance(cls, cov):
        """Metric given by the inverse of a covariance matrix."""
        chol = cholesky_factor(np.asarray(cov, dtype=float), "covariance")
        inv = linalg.cho_solve((chol, True), np.eye(chol.shape[0]))
        return cls((inv + inv.T) / 2)

    @property
    def n(self):
        return self.matrix.shape[0]

    def _check(self, *vecs):
        for v in vecs:
            if v.shape != (self.n,):
                raise DomainError(f"vector of shape {v.shape} does not match metric of size {self.n}")

    def inner(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        self._check(a, b)
        return float(a @ (self.matrix @ b))

    def norm(self, a):
        return math.sqrt(max(self.inner(a, a), 0.0))

    def angle(self, a, b):
        """Angle between ``a`` and ``b`` under the metric, in [0, pi]."""
        denom = self.norm(a) * self.norm(b)
        if denom == 0:
            raise DomainError("angle undefined for a zero vector")
        return math.acos(min(1.0, max(-1.0, self.inner(a, b) / denom)))

    def spectral(self):
        return SpectralDecomposition.of(self.matrix)

    def scaled(self, factor):
        return PrecisionMetric(self.matrix * factor)


def as_metric(metric, n):
    """Coerce ``None`` (identity), an array or a :class:`PrecisionMetric`."""
    if metric is None:
        return PrecisionMetric.identity(n)
    if isinstance(metric, PrecisionMetric):
        if metric.n != n:
            raise DomainError(f"metric of size {metric.n} does not match vectors of length {n}")
        return metric
    return as_metric(PrecisionMetric(np.asarray(metric, dtype=float)), n)


def precision_inner_product(a, b, metric=None) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError(f"vectors must be 1-D with equal shapes, got {a.shape} and {b.shape}")
    return as_metric(metric, a.shape[0]).inner(a, b)


def precision_norm(a, metric=None) -> float:
    a = np.asarray(a, dtype=float)
    return as_metric(metric, a.shape[0]).norm(a)


def precision_angle(a, b, metric=None) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError("vectors must have equal shapes")
    return as_metric(metric, a.shape[0]).angle(a, b)


def eigen_angles(v, decomp: SpectralDecomposition) -> NDArray:
    """Euclidean angle between ``v`` and each eigenvector column of ``decomp.U``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (decomp.U.shape[0],):
        raise DomainError("vector length does not match decomposition")
    nv = np.linalg.norm(v)
    if nv == 0:
        raise DomainError("eigen angles undefined for the zero vector")
    cos = (decomp.U.T @ v) / (nv * np.linalg.norm(decomp.U, axis=0))
    return np.arccos(np.clip(cos, -1.0, 1.0))


def graph_laplacian(adjacency: ArrayLike) -> NDArray:
    """``Q = diag(A 1) - A`` for a binary, symmetric, hollow, connected adjacency."""
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructuralError("adjacency must be square")
    if not np.array_equal(a, a.T):
        raise StructuralError("adjacency must be symmetric")
    if not np.all((a == 0) | (a == 1)):
        raise StructuralError("adjacency must be binary")
    if np.any(np.diag(a) != 0):
        raise StructuralError("adjacency must have a zero diagonal")
    ncomp, _ = connected_components(a, directed=False)
    if ncomp != 1:
        raise StructuralError(f"graph is disconnected ({ncomp} components)")
    return np.diag(a.sum(axis=1)) - a


def rook_adjacency(rows: int, cols: int | None = None) -> NDArray:
    """Rook (shared-edge) adjacency of a ``rows x cols`` lattice, row-major order."""
    cols = rows if cols is None else cols
    n = rows * cols
    a = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                a[i, i + 1] = a[i + 1, i] = 1
            if r + 1 < rows:
                a[i, i + cols] = a[i + cols, i] = 1
    return a


def grid_centroids(rows: int, cols: int | None = None) -> NDArray:
    """Centroids of a ``rows x cols`` partition of the unit square (row-major)."""
    cols = rows if cols is None else cols
    ys = (np.arange(rows) + 0.5) / rows
    xs = (np.arange(cols) + 0.5) / cols
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def unit_square_grid(side: int) -> NDArray:
    """``side x side`` regular grid of points spanning [0, 1]^2 (corners included)."""
    g = np.linspace(0.0, 1.0, side)
    gy, gx = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def laplacian_spectrum(q: NDArray):
    """Ascending eigenpairs of a connected-graph Laplacian with the null eigenvalue pinned to 0."""
    lam, vecs = np.linalg.eigh(q)
    lam = lam.copy()
    lam[0] = 0.0
    return lam, vecs
