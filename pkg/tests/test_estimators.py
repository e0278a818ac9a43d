import math

import numpy as np
import pytest

import spconf.estimators as est
from spconf.errors import DomainError, RankError
from spconf.estimators import (
    FitResult,
    GibbsConfig,
    fit_bayes_ols_gibbs,
    fit_gls_known,
    fit_gls_reml,
    fit_gsem,
    fit_icar_gibbs,
    fit_ols,
    fit_spatial_plus,
    fit_spatial_spline,
    reml_objective,
    reml_theta_bounds,
)
from spconf.numerics import PrecisionMetric, distance_matrix, graph_laplacian, grid_centroids, rook_adjacency
from spconf.smoothers import identity_smoother, thin_plate_smoother, zero_smoother

from conftest import KERNEL_MODULES, random_spd


def _data(n=60, seed=0):
    rng = np.random.default_rng(seed)
    locs = rng.uniform(0, 10, (n, 2))
    x = np.sin(locs[:, 0] / 2) + 0.5 * rng.standard_normal(n)
    y = 0.3 + 3 * x + np.cos(locs[:, 1] / 3) + 0.3 * rng.standard_normal(n)
    return locs, x, y


def test_ols_normal_equations():
    _, x, y = _data()
    d = np.column_stack([np.ones_like(x), x])
    want = np.linalg.solve(d.T @ d, d.T @ y)
    fit = fit_ols(y, x)
    assert fit.beta_x == pytest.approx(want[1], rel=1e-12)
    assert fit.beta0 == pytest.approx(want[0], rel=1e-10)


def test_gls_equals_ols_on_whitened_data(rng):
    _, x, y = _data(30)
    cov = random_spd(rng, 30, cond=200)
    chol = np.linalg.cholesky(cov)
    wd = np.linalg.solve(chol, np.column_stack([np.ones(30), x]))
    wy = np.linalg.solve(chol, y)
    want, *_ = np.linalg.lstsq(wd, wy, rcond=None)
    fit = fit_gls_known(y, x, PrecisionMetric.from_covariance(cov))
    assert fit.beta_x == pytest.approx(want[1], rel=1e-9)
    assert fit.beta0 == pytest.approx(want[0], rel=1e-9)
    assert fit_gls_known(y, x, np.eye(30)).beta_x == pytest.approx(fit_ols(y, x).beta_x, rel=1e-12)


def test_rank_deficiency_is_reported():
    y = np.arange(5.0)
    with pytest.raises(RankError):
        fit_ols(y, np.full(5, 2.0))
    with pytest.raises(RankError):
        fit_gls_known(y, np.ones(5), np.eye(5))
    with pytest.raises(DomainError):
        fit_ols(y, np.ones(4))
    with pytest.raises(RankError):
        FitResult("OLS", float("nan"))
    with pytest.raises(DomainError):
        FitResult("LASSO", 1.0)


def reml_direct(y, x, locs, theta, p):
    """Negative REML from the textbook formula with sigma2 profiled out."""
    n = len(y)
    xd = np.column_stack([np.ones(n), x])
    v = p * np.exp(-distance_matrix(locs) / theta) + (1 - p) * np.eye(n)
    vi = np.linalg.inv(v)
    a = xd.T @ vi @ xd
    beta = np.linalg.solve(a, xd.T @ vi @ y)
    r = y - xd @ beta
    s2 = r @ vi @ r / (n - 2)
    return 0.5 * ((n - 2) * math.log(s2) + np.linalg.slogdet(v)[1] + np.linalg.slogdet(a)[1])


def test_reml_objective_matches_textbook_formula():
    locs, x, y = _data(40)
    for theta, p in [(0.5, 0.3), (2.0, 0.7), (8.0, 0.95)]:
        assert reml_objective(y, x, locs, theta, p) == pytest.approx(reml_direct(y, x, locs, theta, p), rel=1e-10)


def test_reml_fit_is_a_local_optimum():
    locs, x, y = _data(60, seed=3)
    fit = fit_gls_reml(y, x, locs)
    p = fit.sigma2_s / (fit.sigma2_s + fit.sigma2_e)
    lo, hi = reml_theta_bounds(distance_matrix(locs))
    assert lo <= fit.theta <= hi
    best = reml_objective(y, x, locs, fit.theta, p)
    assert best == pytest.approx(fit.diagnostics["neg_reml"])
    lt, lp = math.log(fit.theta), math.log(p / (1 - p))
    for dt in (-0.05, 0, 0.05):
        for dp in (-0.05, 0, 0.05):
            th = min(max(math.exp(lt + dt), lo), hi)
            pp = 1 / (1 + math.exp(-(lp + dp)))
            assert reml_objective(y, x, locs, th, pp) >= best - 1e-6
    # slope is the GLS slope at the fitted covariance
    v = p * np.exp(-distance_matrix(locs) / fit.theta) + (1 - p) * np.eye(60)
    assert fit.beta_x == pytest.approx(fit_gls_known(y, x, PrecisionMetric.from_covariance(v)).beta_x, rel=1e-8)


def test_spatial_spline_matches_backfitting():
    locs, x, y = _data(50, seed=4)
    s = thin_plate_smoother(locs, lam=0.5)
    beta, f = 0.0, np.zeros(50)
    for _ in range(3000):
        f = s.fit(y - beta * x)
        beta_new = float(x @ (y - f)) / float(x @ x)
        if abs(beta_new - beta) < 1e-14:
            break
        beta = beta_new
    fit = fit_spatial_spline(y, x, locs, lam=0.5)
    assert fit.beta_x == pytest.approx(beta, rel=1e-9)
    assert fit_spatial_spline(y, x, smoother=s).beta_x == pytest.approx(beta, rel=1e-9)


def test_spatial_spline_gcv_path():
    locs, x, y = _data(50, seed=5)
    fit = fit_spatial_spline(y, x, locs)
    assert 3 < fit.diagnostics["edf"] < 50
    assert abs(fit.beta_x - 3) < 0.5
    assert fit.beta0 is not None


def test_spatial_plus_with_zero_first_stage_is_the_spline_fit():
    locs, x, y = _data(50, seed=6)
    a = fit_spatial_plus(y, x, locs, smoother_x=zero_smoother(50), lam=0.2)
    b = fit_spatial_spline(y, x, locs, lam=0.2)
    assert a.beta_x == pytest.approx(b.beta_x, rel=1e-12)
    with pytest.raises(RankError):
        fit_spatial_plus(y, x, locs, smoother_x=identity_smoother(50), lam=0.2)


def test_spatial_plus_uses_first_stage_residuals():
    locs, x, y = _data(50, seed=7)
    sx = thin_plate_smoother(locs, lam=1.0)
    rx = x - sx.fit(x)
    a = fit_spatial_plus(y, x, locs, smoother_x=sx, lam=0.3)
    assert a.beta_x == pytest.approx(fit_spatial_spline(y, rx, locs, lam=0.3).beta_x, rel=1e-12)
    assert a.diagnostics["lam_x"] == 1.0


def test_gsem_is_ols_of_residuals():
    locs, x, y = _data(50, seed=8)
    sx = thin_plate_smoother(locs, lam=0.7)
    sy = thin_plate_smoother(locs, lam=0.2)
    rx, ry = x - sx.fit(x), y - sy.fit(y)
    d = np.column_stack([np.ones(50), rx])
    want = np.linalg.lstsq(d, ry, rcond=None)[0]
    fit = fit_gsem(y, x, smoother_x=sx, smoother_y=sy)
    assert fit.beta_x == pytest.approx(want[1], rel=1e-10)
    assert fit_gsem(y, x, smoother_x=zero_smoother(50), smoother_y=zero_smoother(50)).beta_x == pytest.approx(
        fit_ols(y, x).beta_x, rel=1e-12)
    # GCV path runs and gives a finite slope
    assert math.isfinite(fit_gsem(y, x, locs).beta_x)


def test_fits_are_permutation_invariant():
    locs, x, y = _data(45, seed=9)
    perm = np.random.default_rng(1).permutation(45)
    for fn in (
        lambda l, a, b: fit_ols(b, a),
        lambda l, a, b: fit_spatial_spline(b, a, l),
        lambda l, a, b: fit_spatial_plus(b, a, l),
        lambda l, a, b: fit_gsem(b, a, l),
        lambda l, a, b: fit_gls_reml(b, a, l),
    ):
        one = fn(locs, x, y).beta_x
        two = fn(locs[perm], x[perm], y[perm]).beta_x
        assert one == pytest.approx(two, rel=1e-6, abs=1e-8)


# ---------------------------------------------------------------- Gibbs


def _areal(seed=0, side=6):
    q = graph_laplacian(rook_adjacency(side))
    rng = np.random.default_rng(seed)
    n = side * side
    c = grid_centroids(side)
    x = rng.standard_normal(n)
    y = 1.0 + 3 * x + np.sin(3 * c[:, 0]) + 0.2 * rng.standard_normal(n)
    return q, x, y


def test_icar_single_sweep_matches_dense_conditionals(kernel_module):
    q, x, y = _areal()
    n = len(y)
    lam, vecs = np.linalg.eigh(q)
    lam[0] = 0.0
    w0 = np.random.default_rng(3).standard_normal(n)
    w0c = w0 - w0.mean()
    state = np.concatenate([[0.0, 0.4, 2.0, w0.mean()], w0c])
    normals = np.zeros((1, n + 1))
    gammas = np.array([[5.0, 7.0]])
    out = np.empty((1, 5))
    kernel_module.icar_gibbs(y, x, np.ascontiguousarray(vecs), lam, state, normals, gammas, (0.01, 0.02), out)
    w_prev = w0c + w0.mean()
    beta = x @ (y - w_prev) / (x @ x)
    w = np.linalg.solve(q / 2.0 + np.eye(n) / 0.4, (y - beta * x) / 0.4)
    r = y - beta * x - w
    assert out[0, 0] == pytest.approx(beta, rel=1e-10)
    assert out[0, 3] == pytest.approx(w.mean(), rel=1e-8, abs=1e-12)
    np.testing.assert_allclose(state[4:], w - w.mean(), atol=1e-10)
    assert out[0, 1] == pytest.approx((0.01 + 0.5 * r @ r) / 5.0, rel=1e-8)
    assert out[0, 2] == pytest.approx((0.02 + 0.5 * w @ q @ w) / 7.0, rel=1e-8)
    assert out[0, 4] == 0.0


def test_icar_draws_sum_to_exactly_zero():
    q, x, y = _areal()
    fit, chain = fit_icar_gibbs(y, x, q, GibbsConfig(600, 100, chunk=250), np.random.default_rng(4), keep_w=True)
    assert chain.draws["w"].shape == (500, 36)
    assert np.all(chain.draws["w"].sum(axis=1) == 0.0)
    assert np.all(chain.draws["w_sum"] == 0.0)
    assert fit.model == "ICAR" and chain.retained == 500


def test_icar_recovers_slope_and_is_deterministic():
    q, x, y = _areal(seed=2)
    cfg = GibbsConfig(3000, 1000)
    a, ca = fit_icar_gibbs(y, x, q, cfg, np.random.default_rng(12))
    b, cb = fit_icar_gibbs(y, x, q, cfg, np.random.default_rng(12))
    assert np.array_equal(ca.draws["beta_x"], cb.draws["beta_x"])
    assert abs(a.beta_x - 3) < 0.15
    assert ca.seed_entropy == 12


@pytest.mark.skipif(len(KERNEL_MODULES) < 2, reason="compiled kernels not built")
def test_icar_backends_agree(monkeypatch):
    q, x, y = _areal(seed=6)
    chains = []
    for mod in KERNEL_MODULES:
        monkeypatch.setattr(est, "kernels", mod)
        chains.append(fit_icar_gibbs(y, x, q, GibbsConfig(300, 50), np.random.default_rng(8))[1])
    for key in ("beta_x", "sigma2", "tau2", "intercept"):
        np.testing.assert_allclose(chains[0].draws[key], chains[1].draws[key], rtol=1e-7)


def test_icar_input_checks():
    q, x, y = _areal()
    with pytest.raises(DomainError):
        fit_icar_gibbs(y, x, q, GibbsConfig(10, 0))
    with pytest.raises(DomainError):
        fit_icar_gibbs(y, x, q[:5, :5], GibbsConfig(10, 0), np.random.default_rng(0))
    with pytest.raises(RankError):
        fit_icar_gibbs(y, np.zeros_like(x), q, GibbsConfig(10, 0), np.random.default_rng(0))
    with pytest.raises(DomainError):
        GibbsConfig(100, 100)


def _batch_means_se(v, batches=20):
    b = np.array_split(v, batches)
    return float(np.std([c.mean() for c in b], ddof=1) / math.sqrt(batches))


def test_bayes_ols_posterior_mean_is_ols():
    _, x, y = _data(80, seed=10)
    fit, chain = fit_bayes_ols_gibbs(y, x, GibbsConfig(6000, 1000), np.random.default_rng(5))
    ols = fit_ols(y, x)
    se = _batch_means_se(chain.draws["beta_x"])
    assert abs(fit.beta_x - ols.beta_x) <= 3 * se
    resid = y - ols.beta0 - ols.beta_x * x
    s2 = resid @ resid / 78
    slope_se = math.sqrt(s2 / np.sum((x - x.mean()) ** 2))
    assert np.std(chain.draws["beta_x"]) == pytest.approx(slope_se, rel=0.1)
