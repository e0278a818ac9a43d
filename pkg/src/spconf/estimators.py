"""Slope estimators for y = beta0 + beta_x x (+ spatial term) + eps.

Frequentist pipelines (OLS, known-covariance GLS, REML-estimated exponential
GLS, thin-plate partial-linear fit, Spatial+, gSEM) and two Gibbs samplers
(ICAR spatial random effect, plain Bayesian regression).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from ._backend import kernels
from .errors import ConditioningError, ConvergenceError, DomainError, RankError, SamplerError
from .numerics import PrecisionMetric, as_metric, distance_matrix, graph_laplacian, laplacian_spectrum
from .smoothers import LinearSmoother, residualize, select_gcv, thin_plate_basis, thin_plate_smoother

MODEL_TAGS = ("OLS", "GLS", "S-REML", "PS", "S+", "gSEM", "ICAR", "BayesOLS")


@dataclass
class FitResult:
    """Outcome of one fit. Optional fields are filled only where the model defines them."""

    model: str
    beta_x: float
    beta0: float | None = None
    theta: float | None = None
    sigma2_s: float | None = None
    sigma2_e: float | None = None
    lam: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_TAGS:
            raise DomainError(f"unknown model tag {self.model!r}")
        if not math.isfinite(self.beta_x):
            raise RankError(f"{self.model}: slope estimate is not finite")


@dataclass
class MCMCChain:
    """Retained (post burn-in) draws keyed by parameter name."""

    draws: dict
    iterations: int
    burn_in: int
    seed_entropy: int | None = None

    @property
    def retained(self):
        return self.iterations - self.burn_in

    def mean(self, name):
        return float(np.mean(self.draws[name]))


@dataclass(frozen=True)
class GibbsConfig:
    iterations: int = 8000
    burn_in: int = 2000
    prior_shape: float = 0.01
    prior_rate: float = 0.01
    chunk: int = 1000

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise DomainError("need iterations >= 1 and 0 <= burn_in < iterations")
        if self.prior_shape <= 0 or self.prior_rate <= 0:
            raise DomainError("inverse-gamma hyperparameters must be > 0")
        if self.chunk < 1:
            raise DomainError("chunk must be >= 1")

    @classmethod
    def desk(cls):
        return cls(8000, 2000)

    @classmethod
    def paper(cls):
        return cls(80000, 20000)


def _vectors(y, x):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.ndim != 1 or y.shape != x.shape:
        raise DomainError("y and x must be 1-D vectors of equal length")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise DomainError("y and x must be finite")
    return y, x


def _check_not_constant(x, what="x", reference=None):
    scale = np.linalg.norm(x if reference is None else reference)
    if np.linalg.norm(x - x.mean()) <= 1e-12 * max(scale, np.finfo(float).tiny):
        raise RankError(f"{what} is (numerically) constant")


def _two_column_solve(gram, rhs, what):
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] ** 2
    if not det > 1e-14 * gram[0, 0] * gram[1, 1]:
        raise RankError(f"{what}: design [1 x] is rank deficient")
    return np.linalg.solve(gram, rhs)


def fit_ols(y, x) -> FitResult:
    y, x = _vectors(y, x)
    _check_not_constant(x)
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return FitResult("OLS", float(coef[1]), float(coef[0]))


def fit_gls_known(y, x, metric) -> FitResult:
    """GLS with a known precision matrix ``M`` (the inverse error covariance)."""
    y, x = _vectors(y, x)
    _check_not_constant(x)
    m = as_metric(metric, y.shape[0]).matrix
    design = np.column_stack([np.ones_like(x), x])
    md = m @ design
    coef = _two_column_solve(design.T @ md, md.T @ y, "GLS")
    return FitResult("GLS", float(coef[1]), float(coef[0]))


# ---------------------------------------------------------------- REML


class _RemlProblem:
    """Restricted likelihood for ``Cov(y) = s2 (p R(theta) + (1 - p) I)``, exponential ``R``."""

    def __init__(self, y, design, dist):
        self.y = y
        self.X = design
        self.dist = dist
        self.n, self.k = design.shape

    def evaluate(self, theta, p):
        v = p * np.exp(-self.dist / theta)
        v[np.diag_indices_from(v)] = 1.0
        try:
            chol = linalg.cholesky(v, lower=True)
        except linalg.LinAlgError:
            return math.inf, None
        wx = linalg.solve_triangular(chol, self.X, lower=True)
        wy = linalg.solve_triangular(chol, self.y, lower=True)
        xtvx = wx.T @ wx
        try:
            cx = linalg.cholesky(xtvx, lower=True)
        except linalg.LinAlgError:
            return math.inf, None
        beta = linalg.cho_solve((cx, True), wx.T @ wy)
        r = wy - wx @ beta
        s2 = float(r @ r) / (self.n - self.k)
        if not s2 > 0:
            return math.inf, None
        logdet_v = 2.0 * np.sum(np.log(np.diag(chol)))
        logdet_x = 2.0 * np.sum(np.log(np.diag(cx)))
        nll = 0.5 * ((self.n - self.k) * math.log(s2) + logdet_v + logdet_x)
        return nll, (beta, s2)


def _logit(p):
    return math.log(p / (1.0 - p))


def _expit(t):
    return 1.0 / (1.0 + math.exp(-t))


def reml_theta_bounds(dist):
    """Search range for the exponential range parameter.

    Below about half the median nearest-neighbour distance the correlation
    between any two sites is negligible and theta is not identifiable from
    the nugget; above a few times the domain diameter the field is
    indistinguishable from a constant.
    """
    off = dist + np.diag(np.full(dist.shape[0], np.inf))
    nn = np.median(off.min(axis=1))
    return 0.5 * nn, 5.0 * float(dist.max())


def fit_gls_reml(y, x, locs, starts=None, max_iter=400) -> FitResult:
    """Exponential-covariance GLS with covariance parameters estimated by REML.

    The restricted log-likelihood is profiled over the total variance and
    maximized over ``(log theta, logit p)`` with ``p = s2_s / (s2_s + s2_e)``
    by bounded Nelder-Mead from several starting points.
    """
    y, x = _vectors(y, x)
    n = y.shape[0]
    if n < 10:
        raise DomainError("REML fit needs at least 10 observations")
    _check_not_constant(x)
    dist = distance_matrix(locs)
    if dist.shape[0] != n:
        raise DomainError("locations do not match data length")
    problem = _RemlProblem(y, np.column_stack([np.ones(n), x]), dist)
    th_lo, th_hi = reml_theta_bounds(dist)
    bounds = [(math.log(th_lo), math.log(th_hi)), (-9.0, 9.0)]
    if starts is None:
        dmax = float(dist.max())
        starts = [(0.1 * dmax, 0.5), (0.3 * dmax, 0.8), (0.03 * dmax, 0.2)]

    def objective(t):
        return problem.evaluate(math.exp(t[0]), _expit(t[1]))[0]

    best = None
    n_ok = 0
    for th0, p0 in starts:
        t0 = np.array([
            min(max(math.log(th0), bounds[0][0]), bounds[0][1]),
            min(max(_logit(p0), bounds[1][0]), bounds[1][1]),
        ])
        res = optimize.minimize(
            objective, t0, method="Nelder-Mead", bounds=bounds,
            options={"maxiter": max_iter, "xatol": 1e-6, "fatol": 1e-9},
        )
        if not math.isfinite(res.fun):
            continue
        if res.success:
            n_ok += 1
        if best is None or res.fun < best.fun or (res.success and not best.success and res.fun <= best.fun):
            best = res
    if best is None or n_ok == 0:
        raise ConvergenceError("REML optimization did not converge from any start", best)
    theta, p = math.exp(best.x[0]), _expit(best.x[1])
    _, (beta, s2) = problem.evaluate(theta, p)
    return FitResult(
        "S-REML", float(beta[1]), float(beta[0]), theta=theta,
        sigma2_s=p * s2, sigma2_e=(1.0 - p) * s2,
        diagnostics={"neg_reml": float(best.fun), "converged_starts": n_ok, "nfev": int(best.nfev)},
    )


def reml_objective(y, x, locs, theta, p):
    """Negative restricted log-likelihood (up to a constant) at ``(theta, p)``."""
    y, x = _vectors(y, x)
    problem = _RemlProblem(y, np.column_stack([np.ones_like(x), x]), distance_matrix(locs))
    return problem.evaluate(theta, p)[0]


# ---------------------------------------------------------------- splines


def _partial_linear_slope(y, x, smoother: LinearSmoother, what):
    """Exact joint minimizer ``beta = x^T (I-S) y / x^T (I-S) x`` of the partial-linear fit."""
    rx = residualize(x, smoother)
    c = float(x @ rx)
    if not c > 1e-12 * float(x @ x):
        raise RankError(f"{what}: covariate is reproduced by the smoother")
    return float(rx @ y) / c


def fit_spatial_spline(y, x, locs=None, lam=None, smoother: LinearSmoother | None = None) -> FitResult:
    """Partial-linear model ``y = beta x + f(s) + eps`` with ``f`` a thin-plate spline.

    The intercept lives in the unpenalized part of ``f``. By default the
    penalty minimizes the GCV score of the joint fit; ``lam`` fixes it, and
    ``smoother`` replaces the thin-plate smoother by any linear smoother.
    """
    y, x = _vectors(y, x)
    if smoother is not None:
        beta = _partial_linear_slope(y, x, smoother, "PS")
        return FitResult("PS", beta, lam=smoother.lam)
    if locs is None:
        raise DomainError("fit_spatial_spline needs locations or a smoother")
    basis = thin_plate_basis(locs)
    if basis.n != y.shape[0]:
        raise DomainError("locations do not match data length")
    if lam is None:
        grid = basis.default_grid()
        scores = basis.gcv_scores_partial(y, x, grid)
        lam = select_gcv(scores, grid)
    smoother = basis.smoother(lam)
    beta = _partial_linear_slope(y, x, smoother, "PS")
    fitted = smoother.fit(y - beta * x)
    alpha = basis.affine_coefficients(fitted, lam, y - beta * x) if lam > 0 else None
    return FitResult(
        "PS", beta, None if alpha is None else float(alpha[0]), lam=float(lam),
        diagnostics={"edf": float(basis.edf(lam))},
    )


def fit_spatial_plus(y, x, locs=None, lam_x=None, smoother_x: LinearSmoother | None = None,
                     lam=None, smoother: LinearSmoother | None = None) -> FitResult:
    """Spatial+: replace ``x`` by its spatial residuals, then fit the spline model.

    Step 1 smooths ``x`` over space (thin-plate, GCV unless ``lam_x`` or
    ``smoother_x`` is given) and keeps ``r_x = (I - S_x) x``. Step 2 is
    :func:`fit_spatial_spline` with ``r_x`` in place of ``x``.
    """
    y, x = _vectors(y, x)
    if smoother_x is None:
        if locs is None:
            raise DomainError("fit_spatial_plus needs locations or smoothers")
        smoother_x = thin_plate_smoother(locs, lam=lam_x, response=x)
    rx = residualize(x, smoother_x)
    if np.linalg.norm(rx) <= 1e-10 * max(np.linalg.norm(x), np.finfo(float).tiny):
        raise RankError("S+: spatial residuals of x vanish")
    step2 = fit_spatial_spline(y, rx, locs, lam=lam, smoother=smoother)
    return FitResult(
        "S+", step2.beta_x, step2.beta0, lam=step2.lam,
        diagnostics={"lam_x": smoother_x.lam, **step2.diagnostics},
    )


def fit_gsem(y, x, locs=None, smoother_x: LinearSmoother | None = None,
             smoother_y: LinearSmoother | None = None) -> FitResult:
    """gSEM: OLS (with intercept) of the spatial residuals of ``y`` on those of ``x``.

    Each residual comes from its own thin-plate smoother with GCV-chosen
    penalty unless explicit smoothers are supplied.
    """
    y, x = _vectors(y, x)
    if smoother_x is None or smoother_y is None:
        if locs is None:
            raise DomainError("fit_gsem needs locations or both smoothers")
    if smoother_x is None:
        smoother_x = thin_plate_smoother(locs, response=x)
    if smoother_y is None:
        smoother_y = thin_plate_smoother(locs, response=y)
    rx = residualize(x, smoother_x)
    ry = residualize(y, smoother_y)
    _check_not_constant(rx, "gSEM: residualized x", reference=x)
    res = fit_ols(ry, rx)
    return FitResult(
        "gSEM", res.beta_x, res.beta0,
        diagnostics={"lam_x": smoother_x.lam, "lam_y": smoother_y.lam},
    )


# ---------------------------------------------------------------- Gibbs


def _rng_entropy(rng):
    seq = getattr(rng.bit_generator, "seed_seq", None)
    ent = getattr(seq, "entropy", None)
    return int(ent) if isinstance(ent, int) else None


def fit_icar_gibbs(y, x, q, config: GibbsConfig | None = None, rng=None, keep_w=False):
    """Gibbs sampler for ``y = beta_x x + w + eps`` with an ICAR prior on ``w``.

    ``w`` has improper density proportional to ``exp(-w^T Q w / (2 tau2))``;
    its constant component is left free and plays the role of the intercept
    (reported as ``beta0``). Each sweep updates ``beta_x``, ``w``, ``sigma2``
    and ``tau2`` from their full conditionals, with ``w`` drawn exactly in
    the eigenbasis of ``Q`` and stored centered so that ``sum(w) == 0``.

    Returns
    -------
    FitResult, MCMCChain
        Posterior means and retained draws (``beta_x``, ``sigma2``, ``tau2``,
        ``intercept``, ``w_sum`` and optionally ``w``).
    """
    config = config or GibbsConfig()
    if rng is None:
        raise DomainError("an explicit numpy Generator is required")
    y, x = _vectors(y, x)
    q = np.asarray(q, dtype=float)
    n = y.shape[0]
    if q.shape != (n, n):
        raise DomainError("Q does not match data length")
    graph_laplacian(np.diag(np.diag(q)) - q)
    if float(x @ x) == 0:
        raise RankError("ICAR: x is identically zero")
    lam, vecs = laplacian_spectrum(q)
    vecs = np.ascontiguousarray(vecs)
    a, b = config.prior_shape, config.prior_rate
    shapes = np.array([a + 0.5 * n, a + 0.5 * (n - 1)])

    beta0 = float(x @ y) / float(x @ x)
    resid = y - beta0 * x
    state = np.zeros(4 + n)
    state[0] = beta0
    state[1] = max(float(np.var(resid)), 1e-8)
    state[2] = 1.0
    state[3] = float(resid.mean())

    trace = np.empty((config.iterations, 5))
    w_draws = np.empty((config.iterations - config.burn_in, n)) if keep_w else None
    done = 0
    while done < config.iterations:
        m = min(config.chunk, config.iterations - done)
        normals = rng.standard_normal((m, n + 1))
        gammas = rng.standard_gamma(shapes, size=(m, 2))
        out = trace[done:done + m]
        out_w = np.empty((m, n)) if keep_w else None
        bad = kernels.icar_gibbs(y, x, vecs, lam, state, normals, gammas, (b, b), out, out_w)
        if bad >= 0:
            raise SamplerError("ICAR Gibbs produced a non-finite draw", done + bad)
        if keep_w:
            lo = max(config.burn_in - done, 0)
            if lo < m:
                start = done + lo - config.burn_in
                w_draws[start:start + m - lo] = out_w[lo:]
        done += m
    kept = trace[config.burn_in:]
    draws = {
        "beta_x": kept[:, 0].copy(),
        "sigma2": kept[:, 1].copy(),
        "tau2": kept[:, 2].copy(),
        "intercept": kept[:, 3].copy(),
        "w_sum": kept[:, 4].copy(),
    }
    if keep_w:
        draws["w"] = w_draws
    chain = MCMCChain(draws, config.iterations, config.burn_in, _rng_entropy(rng))
    fit = FitResult(
        "ICAR", chain.mean("beta_x"), chain.mean("intercept"),
        sigma2_s=chain.mean("tau2"), sigma2_e=chain.mean("sigma2"),
        diagnostics={"backend": kernels.BACKEND},
    )
    return fit, chain


def fit_bayes_ols_gibbs(y, x, config: GibbsConfig | None = None, rng=None):
    """Two-block Gibbs sampler for ``y = beta0 + beta_x x + eps``.

    Flat prior on ``(beta0, beta_x)``, inverse-gamma prior on ``sigma2``.
    """
    config = config or GibbsConfig()
    if rng is None:
        raise DomainError("an explicit numpy Generator is required")
    y, x = _vectors(y, x)
    _check_not_constant(x)
    n = y.shape[0]
    design = np.column_stack([np.ones(n), x])
    gram = design.T @ design
    chol_inv = linalg.cholesky(np.linalg.inv(gram), lower=True)
    beta_hat = np.linalg.solve(gram, design.T @ y)
    a, b = config.prior_shape, config.prior_rate
    shape = a + 0.5 * n

    resid = y - design @ beta_hat
    sigma2 = max(float(resid @ resid) / max(n - 2, 1), 1e-8)
    trace = np.empty((config.iterations, 3))
    done = 0
    while done < config.iterations:
        m = min(config.chunk, config.iterations - done)
        normals = rng.standard_normal((m, 2))
        gammas = rng.standard_gamma(shape, size=m)
        for t in range(m):
            beta = beta_hat + math.sqrt(sigma2) * (chol_inv @ normals[t])
            r = y - design @ beta
            sigma2 = (b + 0.5 * float(r @ r)) / gammas[t]
            if not (math.isfinite(sigma2) and np.all(np.isfinite(beta))):
                raise SamplerError("Bayesian regression Gibbs produced a non-finite draw", done + t)
            trace[done + t] = (beta[1], sigma2, beta[0])
        done += m
    kept = trace[config.burn_in:]
    draws = {"beta_x": kept[:, 0].copy(), "sigma2": kept[:, 1].copy(), "intercept": kept[:, 2].copy()}
    chain = MCMCChain(draws, config.iterations, config.burn_in, _rng_entropy(rng))
    fit = FitResult("BayesOLS", chain.mean("beta_x"), chain.mean("intercept"), sigma2_e=chain.mean("sigma2"))
    return fit, chain
