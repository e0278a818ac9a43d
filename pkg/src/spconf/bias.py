"""Closed-form slope bias and Monte-Carlo expected-bias surfaces.

Every bias here is ``E(beta_x_hat) - beta_x``. Fixed-realization formulas
take ``x`` and ``z`` as known and average over the response noise only;
the stochastic ones condition on ``x`` and average over ``z`` as well.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .datagen import ConfoundedFieldSpec, GeneratingCoefficients
from .errors import ConditioningError, DegeneracyError, DomainError, RankError
from .numerics import (
    DEFAULT_NUGGET,
    CorrelationKernel,
    PrecisionMetric,
    as_metric,
    cholesky_factor,
    correlation_matrix,
    unit_square_grid,
)
from .smoothers import LinearSmoother, residualize

ZERO_TOL = 1e-12


@dataclass
class BiasReport:
    """Bias of one estimator; ``components`` add up to ``bias``."""

    model: str
    bias: float
    components: dict
    n: int
    fingerprint: str

    def component_sum(self):
        return float(sum(self.components.values()))


def fingerprint(*arrays) -> str:
    """Short digest of the exact bytes of the inputs."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=float))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


def _pair(x, z):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.ndim != 1 or x.shape != z.shape:
        raise DomainError("x and z must be 1-D vectors of equal length")
    return x, z


def _ratio(num, den, scale, what):
    """``num / den`` with 0/0 -> 0; a vanishing ``den`` alone is an error.

    ``scale`` is the magnitude the terms are compared against, so the
    thresholds do not depend on the units of the data.
    """
    tol = ZERO_TOL * scale
    if abs(den) <= tol:
        if abs(num) <= tol:
            return 0.0
        raise DegeneracyError(f"{what}: vanishing denominator with non-zero numerator")
    return num / den


# ---------------------------------------------------------------- fixed realizations


def _slope_ratio_terms(metric, r, v):
    """``(||1||^2 <r,v> - <r,1><v,1>, ||1||^2 ||r||^2 - <r,1>^2)`` under ``metric``."""
    one = np.ones(r.shape[0])
    m = metric.matrix
    m1 = m @ one
    mr = m @ r
    n1 = float(one @ m1)
    r1 = float(r @ m1)
    num = n1 * float(v @ mr) - r1 * float(v @ m1)
    den = n1 * float(r @ mr) - r1 * r1
    return num, den


def bias_gls_fixed(x, z, beta_z, metric=None) -> float:
    """Bias of GLS on ``[1 x]`` under precision ``M`` when ``z`` is omitted.

    ``beta_z (||1||^2 <x,z> - <x,1><z,1>) / (||1||^2 ||x||^2 - <x,1>^2)`` with
    all inner products taken in ``M``.
    """
    x, z = _pair(x, z)
    metric = as_metric(metric, x.shape[0])
    num, den = _slope_ratio_terms(metric, x, z)
    n1 = metric.inner(np.ones_like(x), np.ones_like(x))
    if not den > ZERO_TOL * n1 * metric.inner(x, x):
        raise RankError("x is constant in the metric sense")
    return beta_z * num / den


def bias_ols_fixed(x, z, beta_z) -> float:
    """:func:`bias_gls_fixed` with the Euclidean metric."""
    x, z = _pair(x, z)
    n = x.shape[0]
    sx, sz = x.sum(), z.sum()
    num = n * float(x @ z) - sx * sz
    den = n * float(x @ x) - sx * sx
    if den <= ZERO_TOL * n * float(x @ x) or den <= 0:
        raise RankError("x is constant")
    return beta_z * num / den


def bias_spatialplus_fixed(x, z, beta_x, beta_z, smoother_x, metric=None) -> BiasReport:
    """Bias of the two-step Spatial+ estimator with fixed ``S_x`` and metric ``M``.

    With ``r = (I - S_x) x`` the second step is a GLS fit of ``y`` on
    ``[1 r]``, whose expectation gives
    ``a2 = beta_x (num(r, x) / den(r) - 1)`` and ``b2 = beta_z num(r, z) / den(r)``
    where ``num(r, v) = ||1||^2 <r,v> - <r,1><v,1>`` and
    ``den(r) = ||1||^2 ||r||^2 - <r,1>^2``.
    """
    x, z = _pair(x, z)
    metric = as_metric(metric, x.shape[0])
    r = residualize(x, smoother_x)
    num_x, den = _slope_ratio_terms(metric, r, x)
    num_z, _ = _slope_ratio_terms(metric, r, z)
    n1 = metric.inner(np.ones_like(x), np.ones_like(x))
    scale_x = n1 * max(metric.inner(x, x), 1e-300)
    scale_z = n1 * max(metric.inner(z, z), metric.inner(x, x), 1e-300)
    a2 = beta_x * (_ratio(num_x, den, scale_x, "S+ bias (x term)") - 1.0)
    # the z-term shares the denominator; compare it on the x scale too
    b2 = beta_z * _ratio(num_z, den, max(scale_z, scale_x), "S+ bias (z term)")
    return BiasReport("S+", a2 + b2, {"a2": a2, "b2": b2}, x.shape[0],
                      fingerprint(x, z, [beta_x, beta_z], smoother_hat(smoother_x), metric.matrix))


def smoother_hat(s):
    return s.hat if isinstance(s, LinearSmoother) else np.asarray(s, dtype=float)


def bias_gsem_fixed(x, z, beta_x, beta_z, smoother_x, smoother_y, beta0=0.0) -> BiasReport:
    """Bias of gSEM (OLS of ``(I-S_y) y`` on ``[1, (I-S_x) x]``) with fixed smoothers.

    ``E(beta_hat) = sum_v beta_v (||1||^2 r^T (I-S_y) v - <r,1> 1^T (I-S_y) v) / den(r)``
    over ``v`` in ``(x, z, 1)``, Euclidean inner products, ``r = (I-S_x) x``.
    The ``1`` term (scaled by ``beta0``) vanishes whenever ``S_y``
    reproduces constants; it is reported separately as ``intercept``.
    """
    x, z = _pair(x, z)
    n = x.shape[0]
    r = residualize(x, smoother_x)
    one = np.ones(n)
    r1 = float(r.sum())
    den = n * float(r @ r) - r1 * r1
    if den <= ZERO_TOL * n * max(float(x @ x), 1e-300):
        raise RankError("gSEM: residualized x is constant")

    def term(v):
        rv = residualize(v, smoother_y)
        return (n * float(r @ rv) - r1 * float(rv.sum())) / den

    a2 = beta_x * term(x)
    b2 = beta_z * term(z)
    c2 = beta0 * term(one) if beta0 != 0 else 0.0
    comps = {"a2": a2, "b2": b2, "intercept": c2, "minus_beta_x": -float(beta_x)}
    total = a2 + b2 + c2 - beta_x
    return BiasReport("gSEM", total, comps, n,
                      fingerprint(x, z, [beta_x, beta_z, beta0], smoother_hat(smoother_x), smoother_hat(smoother_y)))


def ols_report(x, z, beta_z) -> BiasReport:
    x, z = _pair(x, z)
    b = bias_ols_fixed(x, z, beta_z)
    return BiasReport("OLS", b, {"b2": b}, x.shape[0], fingerprint(x, z, [beta_z]))


def gls_report(x, z, beta_z, metric=None) -> BiasReport:
    x, z = _pair(x, z)
    metric = as_metric(metric, x.shape[0])
    b = bias_gls_fixed(x, z, beta_z, metric)
    return BiasReport("GLS", b, {"b2": b}, x.shape[0], fingerprint(x, z, [beta_z], metric.matrix))


# ---------------------------------------------------------------- stochastic X


def compute_K(p_c, r_u, r_c):
    """``K = p_c (p_c I + (1 - p_c) R_u R_c^-1)^-1``.

    Evaluated as ``p_c R_c (p_c R_c + (1 - p_c) R_u)^-1``, which avoids
    forming ``R_c^-1``. ``K = I`` exactly when ``p_c = 1``.
    """
    if not 0 < p_c <= 1:
        raise DomainError("p_c must lie in (0, 1]")
    r_c = np.asarray(r_c, dtype=float)
    r_u = np.asarray(r_u, dtype=float)
    chol_c = cholesky_factor(r_c, "R_c")
    n = r_c.shape[0]
    if p_c == 1:
        return np.eye(n)
    a = p_c * r_c + (1.0 - p_c) * r_u
    try:
        chol_a = cholesky_factor(a, "p_c R_c + (1 - p_c) R_u")
    except ConditioningError:
        # fall back on the defining form; only R_c needs to be invertible
        m = p_c * np.eye(n) + (1.0 - p_c) * linalg.cho_solve((chol_c, True), r_u.T).T
        return p_c * np.linalg.inv(m)
    return p_c * linalg.cho_solve((chol_a, True), r_c).T


def _slope_of(design_w, target_w):
    """Second coefficient of a least-squares fit (design already whitened)."""
    coef, *_ = np.linalg.lstsq(design_w, target_w, rcond=None)
    return float(coef[1])


def c_nonspatial(x, K, mu_x=0.0):
    """``[(X*^T X*)^-1 X*^T K (x - mu_x 1)]_2``."""
    x = np.asarray(x, dtype=float)
    design = np.column_stack([np.ones_like(x), x])
    if np.linalg.matrix_rank(design) < 2:
        raise RankError("x is constant")
    return _slope_of(design, K @ (x - mu_x))


def c_spatial(x, K, sigma_chol, mu_x=0.0):
    """``[(X*^T S^-1 X*)^-1 X*^T S^-1 K (x - mu_x 1)]_2`` given the Cholesky factor of ``S``."""
    x = np.asarray(x, dtype=float)
    design = np.column_stack([np.ones_like(x), x])
    dw = linalg.solve_triangular(sigma_chol, design, lower=True)
    tw = linalg.solve_triangular(sigma_chol, K @ (x - mu_x), lower=True)
    if np.linalg.matrix_rank(dw) < 2:
        raise RankError("x is constant")
    return _slope_of(dw, tw)


def _stochastic_prefactor(spec: ConfoundedFieldSpec, coeffs: GeneratingCoefficients):
    return coeffs.beta_z * spec.rho * math.sqrt(spec.sigma2_z / spec.sigma2_c)


def bias_nonspatial_stochastic(x, spec: ConfoundedFieldSpec, coeffs: GeneratingCoefficients, locs,
                               nugget=DEFAULT_NUGGET) -> float:
    """OLS bias given ``X = x`` averaged over the confounder and noise.

    ``beta_z rho (sigma_z / sigma_c) [(X*^T X*)^-1 X*^T K (x - mu_x 1)]_2``.
    """
    pref = _stochastic_prefactor(spec, coeffs)
    if pref == 0:
        return 0.0
    r_c, r_u = spec.correlations(locs, nugget)
    return pref * c_nonspatial(x, compute_K(spec.p_c, r_u, r_c), spec.mu_x)


def spatial_error_covariance(spec: ConfoundedFieldSpec, coeffs: GeneratingCoefficients, r_c):
    """``Sigma = beta_z^2 sigma_z^2 R_c + sigma^2 I``."""
    return coeffs.beta_z**2 * spec.sigma2_z * r_c + coeffs.sigma2 * np.eye(r_c.shape[0])


def bias_spatial_stochastic(x, spec: ConfoundedFieldSpec, coeffs: GeneratingCoefficients, locs,
                            nugget=DEFAULT_NUGGET) -> float:
    """Known-covariance GLS bias given ``X = x``, with ``Sigma`` from :func:`spatial_error_covariance`."""
    pref = _stochastic_prefactor(spec, coeffs)
    if pref == 0:
        return 0.0
    r_c, r_u = spec.correlations(locs, nugget)
    sigma = spatial_error_covariance(spec, coeffs, r_c)
    chol = cholesky_factor(sigma, "Sigma")
    return pref * c_spatial(x, compute_K(spec.p_c, r_u, r_c), chol, spec.mu_x)


# ---------------------------------------------------------------- surfaces


@dataclass(frozen=True)
class SurfaceSpec:
    """Grid of ``(theta_c, theta_u)`` cells at fixed ``(nu, p_c, p_z)``.

    Locations are a ``side x side`` regular grid on the unit square. The
    variance parameters are rebuilt from the two fractions as
    ``sigma_c^2 = p_c``, ``sigma_u^2 = 1 - p_c``, ``sigma_z^2 = beta_z = 1``
    and ``sigma^2 = (1 - p_z) / p_z``.
    """

    nu: float = 2.0
    theta_c: tuple = tuple(round(0.1 * k, 10) for k in range(1, 11))
    theta_u: tuple = tuple(round(0.1 * k, 10) for k in range(1, 11))
    p_c: float = 0.5
    p_z: float = 0.5
    side: int = 10
    replicates: int = 200
    seed: int = 0
    nugget: float = DEFAULT_NUGGET

    def __post_init__(self):
        if not (0 < self.p_c < 1 and 0 < self.p_z < 1):
            raise DomainError("p_c and p_z must lie in the open interval (0, 1)")
        if not self.theta_c or not self.theta_u:
            raise DomainError("theta grids must be non-empty")
        if any(not t > 0 for t in self.theta_c + self.theta_u):
            raise DomainError("theta grids must be strictly positive")
        if not self.nu > 0:
            raise DomainError("nu must be > 0")
        if self.side < 2 or self.replicates < 2:
            raise DomainError("need side >= 2 and replicates >= 2")

    @property
    def sigma2(self):
        return (1.0 - self.p_z) / self.p_z


@dataclass
class SurfaceCell:
    theta_c: float
    theta_u: float
    c_s_mean: float
    c_s_mcse: float
    c_ns_mean: float
    c_ns_mcse: float
    n_fail: int
    message: str = ""


def surface_cell(spec: SurfaceSpec, theta_c, theta_u, seed_seq, locs=None) -> SurfaceCell:
    """Monte-Carlo averages of ``c_S(X)`` and ``c_NS(X)`` for one grid cell."""
    locs = unit_square_grid(spec.side) if locs is None else locs
    n = locs.shape[0]
    rng = np.random.default_rng(seed_seq)
    try:
        r_c = correlation_matrix(locs, CorrelationKernel.matern(theta_c, spec.nu), spec.nugget)
        r_u = correlation_matrix(locs, CorrelationKernel.matern(theta_u, spec.nu), spec.nugget)
        l_c = cholesky_factor(r_c, "R_c")
        l_u = cholesky_factor(r_u, "R_u")
        K = compute_K(spec.p_c, r_u, r_c)
        sig_chol = cholesky_factor(r_c + spec.sigma2 * np.eye(n), "Sigma")
    except (ConditioningError, RankError) as exc:
        nan = float("nan")
        return SurfaceCell(theta_c, theta_u, nan, nan, nan, nan, spec.replicates, str(exc))
    s_c, s_u = math.sqrt(spec.p_c), math.sqrt(1.0 - spec.p_c)
    cs, cns = [], []
    n_fail = 0
    message = ""
    for _ in range(spec.replicates):
        g = rng.standard_normal((2, n))
        x = s_c * (l_c @ g[0]) + s_u * (l_u @ g[1])
        try:
            cs.append(c_spatial(x, K, sig_chol))
            cns.append(c_nonspatial(x, K))
        except (RankError, ConditioningError) as exc:
            n_fail += 1
            message = str(exc)
    return SurfaceCell(theta_c, theta_u, *_mean_se(cs), *_mean_se(cns), n_fail, message)


def _mean_se(vals):
    vals = np.asarray(vals, dtype=float)
    if vals.size == 0:
        return float("nan"), float("nan")
    if vals.size == 1:
        return float(vals[0]), float("nan")
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def c_surface(spec: SurfaceSpec, workers=1):
    """Expected-bias surfaces over the ``(theta_c, theta_u)`` grid.

    Each cell draws its own stream from ``SeedSequence(spec.seed,
    spawn_key=(i, j))``, so a cell's value does not depend on which other
    cells are computed or in which order.

    Returns
    -------
    list of SurfaceCell
        Row-major in ``(theta_c, theta_u)``.
    """
    locs = unit_square_grid(spec.side)
    jobs = [
        (spec, tc, tu, np.random.SeedSequence(spec.seed, spawn_key=(i, j)), locs)
        for i, tc in enumerate(spec.theta_c)
        for j, tu in enumerate(spec.theta_u)
    ]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_cell_job, jobs))
    return [_cell_job(job) for job in jobs]


def _cell_job(job):
    return surface_cell(*job)


def surface_matrices(cells, spec: SurfaceSpec):
    """Reshape cells into ``(len(theta_c), len(theta_u))`` arrays keyed by field name."""
    shape = (len(spec.theta_c), len(spec.theta_u))
    return {
        name: np.array([getattr(c, name) for c in cells], dtype=float).reshape(shape)
        for name in ("c_s_mean", "c_s_mcse", "c_ns_mean", "c_ns_mcse", "n_fail")
    }
