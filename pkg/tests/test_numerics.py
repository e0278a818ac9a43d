import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spconf.errors import ConditioningError, DomainError, StructuralError
from spconf.numerics import (
    CorrelationKernel,
    PrecisionMetric,
    SpectralDecomposition,
    cholesky_factor,
    correlation_matrix,
    distance_matrix,
    eigen_angles,
    exponential_correlation,
    graph_laplacian,
    grid_centroids,
    laplacian_spectrum,
    matern_correlation,
    precision_angle,
    precision_inner_product,
    precision_norm,
    rook_adjacency,
    unit_square_grid,
)

from conftest import KERNEL_MODULES, random_spd


def mp_matern(d, theta, nu):
    x = 2 * mpmath.sqrt(nu) * d / theta
    if x == 0:
        return 1.0
    return float(x**nu * mpmath.besselk(nu, x) / (mpmath.gamma(nu) * 2 ** (nu - 1)))


@pytest.mark.parametrize("nu", [0.05, 0.3, 0.5, 1.0, 1.7, 2.0, 2.5, 3.9, 10.0])
def test_bessel_k_matches_mpmath(kernel_module, nu):
    xs = np.array([1e-6, 1e-3, 0.1, 0.5, 1.0, 1.99, 2.0, 2.01, 5.0, 20.0, 80.0])
    got = kernel_module.bessel_k(nu, xs)
    for x, g in zip(xs, got):
        want = float(mpmath.besselk(nu, x))
        assert g == pytest.approx(want, rel=1e-12)


def test_temme_gammas_against_gamma_function(kernel_module):
    for mu in (-0.5, -0.2, 1e-9, 0.1, 0.37, 0.5):
        gam1, gam2, gampl, gammi = kernel_module.temme_gammas(mu)
        assert gampl == pytest.approx(1 / math.gamma(1 + mu), rel=1e-14)
        assert gammi == pytest.approx(1 / math.gamma(1 - mu), rel=1e-14)
        assert gam2 == pytest.approx((gammi + gampl) / 2, rel=1e-14)


@pytest.mark.parametrize("nu", [0.25, 0.8, 1.3, 2.0, 4.2])
def test_matern_general_order_matches_mpmath(nu):
    d = np.linspace(0, 3, 13)
    got = matern_correlation(d, 0.7, nu)
    want = [mp_matern(v, 0.7, nu) for v in d]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("k", [0, 1, 2, 5])
def test_half_integer_closed_form_agrees_with_bessel_path(kernel_module, k):
    nu = k + 0.5
    d = np.linspace(0.01, 4, 50)
    closed = matern_correlation(d, 1.3, nu)
    bessel = kernel_module.matern_values(d, 1.3, nu)
    np.testing.assert_allclose(closed, bessel, rtol=1e-12)


def test_matern_values_and_shapes():
    assert matern_correlation(0.0, 2.0, 2.0) == 1.0
    assert isinstance(matern_correlation(0.3, 2.0, 2.0), float)
    out = matern_correlation(np.zeros((2, 3)), 1.0, 1.0)
    assert out.shape == (2, 3) and np.all(out == 1.0)
    vals = matern_correlation(np.linspace(0, 5, 40), 1.0, 2.0)
    assert np.all(np.diff(vals) < 0)
    assert np.all((vals > 0) & (vals <= 1))


def test_matern_half_differs_from_exponential():
    d = 0.4
    assert matern_correlation(d, 1.0, 0.5) == pytest.approx(math.exp(-math.sqrt(2) * d))
    assert exponential_correlation(d, 1.0) == pytest.approx(math.exp(-d))
    assert CorrelationKernel.matern(1.0, 0.5)(d) != CorrelationKernel.exponential(1.0)(d)


def test_kernel_validation():
    with pytest.raises(DomainError):
        CorrelationKernel.matern(0.0, 1.0)
    with pytest.raises(DomainError):
        CorrelationKernel.matern(1.0, -1.0)
    with pytest.raises(DomainError):
        CorrelationKernel("exponential", 1.0, 2.0)
    with pytest.raises(DomainError):
        CorrelationKernel("gaussian", 1.0)
    with pytest.raises(DomainError):
        matern_correlation([-1.0], 1.0, 1.0)
    with pytest.raises(DomainError):
        matern_correlation([np.nan], 1.0, 1.0)


def test_correlation_matrix_structure(rng):
    locs = rng.uniform(0, 1, (30, 2))
    r = correlation_matrix(locs, CorrelationKernel.matern(0.3, 2.0), nugget=1e-6)
    assert np.array_equal(r, r.T)
    np.testing.assert_array_equal(np.diag(r), 1 + 1e-6)
    d = distance_matrix(locs)
    assert r[3, 7] == matern_correlation(d[3, 7], 0.3, 2.0)
    cholesky_factor(r)


def test_cholesky_failure_reports_eigenvalue():
    m = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ConditioningError) as info:
        cholesky_factor(m, "test matrix")
    assert info.value.min_eigenvalue == pytest.approx(-1.0)
    assert "-1.000e+00" in str(info.value)


def test_duplicate_locations_singular():
    locs = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    r = correlation_matrix(locs, CorrelationKernel.exponential(1.0))
    with pytest.raises(ConditioningError):
        cholesky_factor(r)


def test_location_validation():
    with pytest.raises(DomainError):
        distance_matrix(np.zeros((3, 3)))
    with pytest.raises(DomainError):
        distance_matrix(np.zeros((1, 2)))


def test_precision_metric(rng):
    m = random_spd(rng, 6)
    metric = PrecisionMetric(m)
    a, b = rng.standard_normal((2, 6))
    assert metric.inner(a, b) == pytest.approx(a @ m @ b)
    assert precision_inner_product(a, b) == pytest.approx(a @ b)
    assert precision_norm(a, m) == pytest.approx(math.sqrt(a @ m @ a))
    assert 0 <= precision_angle(a, b, metric) <= math.pi
    assert precision_angle(a, 2 * a, metric) == pytest.approx(0.0, abs=1e-7)
    cov = random_spd(rng, 6)
    inv = PrecisionMetric.from_covariance(cov).matrix
    np.testing.assert_allclose(inv @ cov, np.eye(6), atol=1e-10)
    with pytest.raises(DomainError):
        PrecisionMetric(m + np.triu(np.ones((6, 6)), 1))
    with pytest.raises(ConditioningError):
        PrecisionMetric(-np.eye(3))
    with pytest.raises(DomainError):
        metric.inner(np.ones(5), np.ones(5))
    with pytest.raises(DomainError):
        metric.angle(np.zeros(6), a)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, 5, elements=st.floats(-10, 10)),
    arrays(np.float64, 5, elements=st.floats(-10, 10)),
    st.integers(0, 2**32 - 1),
)
def test_inner_product_symmetry_and_cauchy_schwarz(a, b, seed):
    m = random_spd(np.random.default_rng(seed), 5)
    metric = PrecisionMetric(m)
    ab, ba = metric.inner(a, b), metric.inner(b, a)
    assert ab == pytest.approx(ba, rel=1e-9, abs=1e-9)
    assert abs(ab) <= metric.norm(a) * metric.norm(b) * (1 + 1e-9) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.integers(0, 2**32 - 1))
def test_metric_scaling(c, seed):
    rng = np.random.default_rng(seed)
    metric = PrecisionMetric(random_spd(rng, 4))
    a, b = rng.standard_normal((2, 4))
    assert metric.scaled(c).inner(a, b) == pytest.approx(c * metric.inner(a, b), rel=1e-9, abs=1e-12)
    # angles are invariant to scaling the metric
    assert metric.scaled(c).angle(a, b) == pytest.approx(metric.angle(a, b), abs=1e-7)


def test_spectral_decomposition(rng):
    m = random_spd(rng, 8)
    dec = SpectralDecomposition.of(m)
    assert np.all(np.diff(dec.D) <= 0)
    np.testing.assert_allclose(dec.reconstruct(), m, atol=1e-10)
    ang = eigen_angles(dec.U[:, 2], dec)
    assert ang[2] == pytest.approx(0.0, abs=1e-7)
    assert ang[0] == pytest.approx(math.pi / 2)
    assert dec.low_frequency(cutoff=dec.D[3]).sum() == 4


def test_graph_laplacian_rook_grid():
    q = graph_laplacian(rook_adjacency(11))
    assert np.all(q.sum(axis=1) == 0)
    assert np.linalg.matrix_rank(q) == 120
    assert q[0, 0] == 2 and q[12, 12] == 4 and q[1, 1] == 3
    lam, vecs = laplacian_spectrum(q)
    assert lam[0] == 0.0 and lam[1] > 0
    np.testing.assert_allclose(np.abs(vecs[:, 0]), 1 / 11, atol=1e-12)


def test_rectangular_rook_adjacency_degrees():
    a = rook_adjacency(3, 4)
    assert a.shape == (12, 12)
    # 3x4 lattice has 3*3 horizontal + 2*4 vertical edges
    assert a.sum() / 2 == 17


def test_graph_laplacian_rejects_bad_graphs():
    a = rook_adjacency(3)
    a2 = a.copy()
    a2[0, 1] = a2[1, 0] = 0
    a2[0, 3] = a2[3, 0] = 0  # node 0 now isolated
    with pytest.raises(StructuralError, match="disconnected"):
        graph_laplacian(a2)
    with pytest.raises(StructuralError):
        graph_laplacian(a * 0.5)
    asym = a.copy()
    asym[0, 1] = 0
    with pytest.raises(StructuralError):
        graph_laplacian(asym)
    loop = a.copy()
    loop[0, 0] = 1
    with pytest.raises(StructuralError):
        graph_laplacian(loop)


def test_grids():
    c = grid_centroids(2)
    np.testing.assert_allclose(c, [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    g = unit_square_grid(10)
    assert g.shape == (100, 2) and g.min() == 0 and g.max() == 1


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.integers(2, 300), elements=st.floats(-1e6, 1e6)))
def test_center_exact_sums_to_zero(w):
    scale = float(np.max(np.abs(w)))
    for mod in KERNEL_MODULES:
        c = mod.center_exact(w)
        assert math.fsum(c) == 0.0
        assert float(np.sum(c)) == 0.0
        np.testing.assert_allclose(c, w - w.mean(), atol=1e-12 * scale + 1e-300)


def test_center_exact_spreads_the_mean_residual():
    # a constant vector whose floating-point mean is off by a few ulps
    w = np.full(274, 8848.7432522)
    for mod in KERNEL_MODULES:
        c = mod.center_exact(w)
        assert float(np.sum(c)) == 0.0
        assert np.max(np.abs(c)) < 1e-10
