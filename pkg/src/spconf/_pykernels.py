"""Pure-numpy implementations of the hot kernels.

This module mirrors ``_ckernels.pyx`` function for function and is used when
the compiled extension is unavailable. Both consume identical random streams,
so chains agree up to floating-point summation order.
"""
import math

import numpy as np

BACKEND = "python"

_EPS = 1e-16
_MAXIT = 10000
_XMIN = 2.0

# Taylor coefficients of 1/Gamma(z) = sum_k c_k z^k (Abramowitz & Stegun 6.1.34)
_RGAMMA = (
    0.0,
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
)


def temme_gammas(mu):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2.

    gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu) and
    gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2, summed from the power series
    of 1/Gamma so that gam1 has no cancellation at mu -> 0.
    """
    even = 0.0
    odd = 0.0
    for k in range(len(_RGAMMA) - 1, 0, -1):
        if k % 2 == 0:
            even = even * mu * mu + _RGAMMA[k]
        else:
            odd = odd * mu * mu + _RGAMMA[k]
    gam1 = -even
    gam2 = odd
    return gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1


def _scaled_k_small(mu, x):
    # Temme's series for K_mu, K_mu+1 at x < 2, times exp(x)
    gam1, gam2, gampl, gammi = temme_gammas(mu)
    mu2 = mu * mu
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -np.log(x2)
    e = mu * d
    with np.errstate(invalid="ignore", divide="ignore"):
        fact2 = np.where(np.abs(e) < _EPS, 1.0, np.sinh(e) / np.where(e == 0, 1.0, e))
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    total = ff.copy()
    e = np.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = np.ones_like(x)
    dd = x2 * x2
    total1 = p.copy()
    for i in range(1, _MAXIT + 1):
        ff = (i * ff + p + q) / (i * i - mu2)
        c = c * dd / i
        p = p / (i - mu)
        q = q / (i + mu)
        delta = c * ff
        total += delta
        total1 += c * (p - i * ff)
        if np.all(np.abs(delta) < np.abs(total) * _EPS):
            break
    ex = np.exp(x)
    return total * ex, total1 * (2.0 / x) * ex


def _scaled_k_large(mu, x):
    # Steed's continued fraction CF2 for x >= 2, times exp(x)
    mu2 = mu * mu
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu2
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT + 1):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = h + delh
        dels = q * delh
        s = s + dels
        if np.all(np.abs(dels / s) < _EPS):
            break
    h = a1 * h
    kmu = np.sqrt(math.pi / (2.0 * x)) / s
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


def scaled_bessel_k(nu, x):
    """exp(x) * K_nu(x) for real nu >= 0 and an array of x > 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    nl = int(nu + 0.5)
    mu = nu - nl
    small = x < _XMIN
    for mask, branch in ((small, _scaled_k_small), (~small, _scaled_k_large)):
        if not np.any(mask):
            continue
        xs = x[mask]
        kmu, k1 = branch(mu, xs)
        for i in range(1, nl + 1):
            kmu, k1 = k1, (mu + i) * (2.0 / xs) * k1 + kmu
        out[mask] = kmu
    return out


def bessel_k(nu, x):
    """Modified Bessel function of the second kind K_nu(x), x > 0."""
    x = np.asarray(x, dtype=float)
    return scaled_bessel_k(nu, x) * np.exp(-x)


def matern_values(d, theta, nu):
    """Matern correlation at distances ``d`` (1-D array, d >= 0)."""
    d = np.asarray(d, dtype=float)
    x = 2.0 * math.sqrt(nu) * d / theta
    out = np.ones_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        lognorm = -math.lgamma(nu) - (nu - 1.0) * math.log(2.0)
        with np.errstate(over="ignore", invalid="ignore"):
            vals = np.exp(nu * np.log(xp) - xp + lognorm) * scaled_bessel_k(nu, xp)
        vals[~np.isfinite(vals)] = 1.0
        out[pos] = np.minimum(vals, 1.0)
    return out


def center_exact(w):
    """Center ``w`` on a dyadic grid so that its sum is exactly zero.

    Values are rounded to multiples of a power of two fine enough that every
    partial sum is exactly representable. The integer residual left by the
    rounding (and by the rounding error of the mean itself) is spread evenly
    over the entries, so each moves by at most that mean error plus one grid
    step of 2**-(52 - ceil(log2 n) - 2) * max|w - mean|.
    """
    n = w.shape[0]
    w = w - w.mean()
    m = float(np.max(np.abs(w)))
    if m == 0.0 or not math.isfinite(m):
        return w
    bits = 52 - int(math.ceil(math.log2(n))) - 2
    q = math.ldexp(1.0, math.frexp(m)[1] - bits)
    k = np.rint(w / q).astype(np.int64)
    base, rem = divmod(int(k.sum()), n)
    k -= base
    k[:rem] -= 1
    return k.astype(float) * q


def icar_gibbs(y, x, V, lam, state, normals, gammas, priors, out, out_w=None):
    """Run ``normals.shape[0]`` ICAR Gibbs sweeps in the eigenbasis of Q.

    Parameters
    ----------
    y, x : ndarray (n,)
    V, lam : eigenvectors / eigenvalues of the graph Laplacian (lam[0] == 0)
    state : ndarray (4 + n,) holding [beta, sigma2, tau2, intercept, w_centered...];
        updated in place.
    normals : ndarray (m, n + 1) standard normal draws
    gammas : ndarray (m, 2) standard gamma draws with shapes
        (a_sigma + n/2, a_tau + (n-1)/2)
    priors : (b_sigma, b_tau) inverse-gamma rates
    out : ndarray (m, 5) receiving beta, sigma2, tau2, intercept, sum(w_centered)
    out_w : optional ndarray (m, n) receiving the centered w draws

    Returns the index of the first non-finite sweep, or -1.
    """
    n = y.shape[0]
    b_sigma, b_tau = priors
    xtx = float(x @ x)
    beta, sigma2, tau2, mu = state[0], state[1], state[2], state[3]
    wc = state[4:].copy()
    w = wc + mu
    for t in range(normals.shape[0]):
        beta = float(x @ (y - w)) / xtx + math.sqrt(sigma2 / xtx) * normals[t, 0]
        e = V.T @ (y - beta * x)
        prec = lam / tau2 + 1.0 / sigma2
        coef = (e / sigma2) / prec + normals[t, 1:] / np.sqrt(prec)
        w = V @ coef
        mu = float(w.mean())
        wc = center_exact(w)
        w = wc + mu
        resid = y - beta * x - w
        sigma2 = (b_sigma + 0.5 * float(resid @ resid)) / gammas[t, 0]
        quad = float(lam @ (coef * coef))
        tau2 = (b_tau + 0.5 * quad) / gammas[t, 1]
        out[t, 0] = beta
        out[t, 1] = sigma2
        out[t, 2] = tau2
        out[t, 3] = mu
        out[t, 4] = wc.sum()
        if out_w is not None:
            out_w[t] = wc
        if not (math.isfinite(beta) and math.isfinite(sigma2) and math.isfinite(tau2)):
            return t
    state[0], state[1], state[2], state[3] = beta, sigma2, tau2, mu
    state[4:] = wc
    return -1
