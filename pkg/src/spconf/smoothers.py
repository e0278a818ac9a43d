"""Linear smoothers: penalized thin-plate splines and the intercept-only GLS projector.

A smoother is represented by its hat matrix ``S``; fitted values are ``S v``
and residuals ``(I - S) v``. Thin-plate smoothers additionally keep the
eigen-structure of the penalized basis so that a whole grid of penalties can
be scored by GCV without refactorizing.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, DomainError, RankError
from .numerics import as_metric, distance_matrix, validate_locations

GCV_GRID_SIZE = 40
_CACHE_SIZE = 8


@dataclass
class LinearSmoother:
    """Hat matrix ``S`` plus a short description of how it was built."""

    hat: np.ndarray
    lam: float | None = None
    kind: str = "matrix"
    gcv_grid: np.ndarray | None = field(default=None, repr=False)
    gcv_scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.hat.shape[0]

    @property
    def edf(self):
        """Effective degrees of freedom ``tr(S)``."""
        return float(np.trace(self.hat))

    def fit(self, v):
        return self.hat @ np.asarray(v, dtype=float)

    def residual_operator(self):
        return np.eye(self.n) - self.hat


def matrix_smoother(hat, kind="matrix"):
    hat = np.asarray(hat, dtype=float)
    if hat.ndim != 2 or hat.shape[0] != hat.shape[1]:
        raise DomainError(f"hat matrix must be square, got {hat.shape}")
    return LinearSmoother(hat, kind=kind)


def zero_smoother(n):
    """``S = 0``; residuals are the data themselves."""
    return LinearSmoother(np.zeros((n, n)), kind="zero")


def identity_smoother(n):
    """``S = I``; a perfect fit that leaves zero residuals."""
    return LinearSmoother(np.eye(n), kind="identity")


def centering_smoother(n):
    """Euclidean centering, ``S = 11^T / n``."""
    return LinearSmoother(np.full((n, n), 1.0 / n), kind="centering")


def gls_intercept_smoother(metric) -> LinearSmoother:
    """Oblique projection onto constants under the metric ``M``.

    ``S = 1 (1^T M 1)^-1 1^T M``, so ``S v = alpha 1`` with
    ``alpha = <v, 1>_M / ||1||_M^2``. With ``M = I`` this is centering.
    """
    if not hasattr(metric, "matrix"):
        metric = as_metric(metric, np.asarray(metric).shape[0])
    m = metric.matrix
    n = m.shape[0]
    row = m.sum(axis=0)  # 1^T M
    hat = np.outer(np.ones(n), row / row.sum())
    return LinearSmoother(hat, kind="gls_intercept")


def residualize(v, smoother) -> np.ndarray:
    """``(I - S) v`` for a :class:`LinearSmoother` or a raw hat matrix."""
    hat = smoother.hat if isinstance(smoother, LinearSmoother) else np.asarray(smoother, dtype=float)
    v = np.asarray(v, dtype=float)
    if hat.shape != (v.shape[0], v.shape[0]):
        raise DomainError(f"vector of length {v.shape[0]} does not match smoother of size {hat.shape[0]}")
    return v - hat @ v


def _tps_radial(r):
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos])
    return out


class ThinPlateBasis:
    """Full-rank 2-D thin-plate basis at a fixed set of locations.

    With radial matrix ``E`` (``eta(r) = r^2 log r``), affine part
    ``T = [1, s1, s2]`` and ``Z`` an orthonormal basis of the complement of
    ``span(T)``, the penalized fit has residual maker
    ``I - S(lam) = lam Z (F + lam I)^-1 Z^T`` with ``F = Z^T E Z``. ``F`` is
    diagonalized once, ``F = U diag(g) U^T``; everything else is cheap.
    """

    def __init__(self, locs):
        locs = validate_locations(locs)
        n = locs.shape[0]
        if n < 4:
            raise DomainError("thin-plate smoothing needs at least 4 locations")
        self.locs = locs
        self.n = n
        t = np.column_stack([np.ones(n), locs])
        q, r = np.linalg.qr(t, mode="complete")
        rdiag = np.abs(np.diag(r[:3]))
        if rdiag.min() <= 1e-10 * max(rdiag.max(), 1.0):
            raise ConditioningError("locations are collinear; affine part not identifiable", float(rdiag.min()))
        self.T = t
        self._qt = q[:, :3]
        self._rt = r[:3]
        z = q[:, 3:]
        dist = distance_matrix(locs)
        if np.any(dist[np.triu_indices(n, 1)] == 0):
            raise ConditioningError("duplicate locations", 0.0)
        self.E = _tps_radial(dist)
        f = z.T @ self.E @ z
        g, u = np.linalg.eigh((f + f.T) / 2)
        if g[0] <= 1e-12 * g[-1]:
            raise ConditioningError("thin-plate penalty is not positive definite on the complement", float(g[0]))
        self.gamma = g
        self.ZU = z @ u  # eigen-coordinates of the penalized space

    def default_grid(self, size=GCV_GRID_SIZE):
        """Log-spaced penalties a decade beyond the extreme penalty eigenvalues."""
        lo = math.log10(self.gamma[0]) - 1.0
        hi = math.log10(self.gamma[-1]) + 1.0
        return np.logspace(lo, hi, size)

    def residual_weights(self, lam):
        """Diagonal of ``I - S`` in eigen-coordinates, ``lam / (g + lam)``."""
        lam = np.asarray(lam, dtype=float)
        return lam[..., None] / (self.gamma + lam[..., None])

    def edf(self, lam):
        return self.n - np.sum(self.residual_weights(lam), axis=-1)

    def hat(self, lam):
        if lam == 0:
            return np.eye(self.n)
        w = self.residual_weights(lam)
        return np.eye(self.n) - (self.ZU * w) @ self.ZU.T

    def smoother(self, lam, grid=None, scores=None):
        if not (lam >= 0 and math.isfinite(lam)):
            raise DomainError("smoothing penalty must be finite and >= 0")
        return LinearSmoother(self.hat(lam), lam=float(lam), kind="thin_plate", gcv_grid=grid, gcv_scores=scores)

    def gcv_scores(self, y, grid):
        """``n RSS / (n - tr S)^2`` for each penalty in ``grid``."""
        b = self.ZU.T @ np.asarray(y, dtype=float)
        w = self.residual_weights(grid)
        rss = np.sum((w * b) ** 2, axis=1)
        resid_df = np.sum(w, axis=1)
        return self.n * rss / resid_df**2

    def gcv_scores_partial(self, y, x, grid):
        """GCV scores of the partial-linear fit ``y = beta x + f(s)`` for each penalty.

        The hat matrix of the joint fit is
        ``H = S + (I - S) x x^T (I - S) / x^T (I - S) x``.
        """
        a = self.ZU.T @ np.asarray(x, dtype=float)
        b = self.ZU.T @ np.asarray(y, dtype=float)
        w = self.residual_weights(grid)
        c = np.sum(w * a * a, axis=1)
        ok = c > 1e-12 * float(a @ a)
        c_safe = np.where(ok, c, 1.0)
        beta = np.sum(w * a * b, axis=1) / c_safe
        rss = np.sum((w * (b - beta[:, None] * a)) ** 2, axis=1)
        trace_h = self.n - np.sum(w, axis=1) + np.sum((w * a) ** 2, axis=1) / c_safe
        scores = self.n * rss / (self.n - trace_h) ** 2
        return np.where(ok, scores, np.inf)

    def affine_coefficients(self, fitted, lam, v):
        """Coefficients ``(alpha0, alpha1, alpha2)`` of the affine part of ``S(lam) v``."""
        b = self.ZU.T @ np.asarray(v, dtype=float)
        coef = b / (self.gamma + lam)
        radial = self.E @ (self.ZU @ coef)
        return np.linalg.solve(self._rt, self._qt.T @ (fitted - radial))


_basis_cache: OrderedDict = OrderedDict()


def thin_plate_basis(locs) -> ThinPlateBasis:
    """Cached :class:`ThinPlateBasis` keyed by the exact location coordinates."""
    locs = validate_locations(locs)
    key = (locs.shape, locs.tobytes())
    basis = _basis_cache.get(key)
    if basis is None:
        basis = ThinPlateBasis(locs)
        _basis_cache[key] = basis
        if len(_basis_cache) > _CACHE_SIZE:
            _basis_cache.popitem(last=False)
    else:
        _basis_cache.move_to_end(key)
    return basis


def select_gcv(scores, grid):
    i = int(np.argmin(scores))
    if not math.isfinite(scores[i]):
        raise RankError("GCV score is not finite anywhere on the grid")
    return float(grid[i])


def thin_plate_smoother(locs, lam=None, response=None, grid=None) -> LinearSmoother:
    """Penalized thin-plate spline smoother at ``locs``.

    Parameters
    ----------
    lam : float, optional
        Fixed penalty. If omitted, it is chosen by GCV for ``response``.
    response : array, optional
        Data used for GCV; required when ``lam`` is None.
    grid : array, optional
        Candidate penalties (default: 40 log-spaced values spanning the
        penalty spectrum).
    """
    basis = thin_plate_basis(locs)
    if lam is not None:
        return basis.smoother(lam)
    if response is None:
        raise DomainError("GCV selection needs a response vector")
    grid = basis.default_grid() if grid is None else np.asarray(grid, dtype=float)
    scores = basis.gcv_scores(response, grid)
    return basis.smoother(select_gcv(scores, grid), grid, scores)
