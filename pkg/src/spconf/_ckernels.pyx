# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: Bessel K_nu / Matern evaluation and the ICAR Gibbs sweep.

Same algorithms and signatures as ``_pykernels``; see that module for details.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport (sqrt, log, exp, sin, sinh, cosh, fabs, lgamma, frexp,
                        ldexp, rint, isfinite, ceil, log2, M_PI)

cnp.import_array()

BACKEND = "cython"

cdef double _EPS = 1e-16
cdef int _MAXIT = 10000
cdef double _XMIN = 2.0

cdef double[27] _RGAMMA
_RGAMMA[:] = [
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
]


cdef void _temme_gammas(double mu, double* gam1, double* gam2,
                        double* gampl, double* gammi) nogil:
    cdef double even = 0.0, odd = 0.0
    cdef int k
    for k in range(26, 0, -1):
        if k % 2 == 0:
            even = even * mu * mu + _RGAMMA[k]
        else:
            odd = odd * mu * mu + _RGAMMA[k]
    gam1[0] = -even
    gam2[0] = odd
    gampl[0] = odd + mu * even
    gammi[0] = odd - mu * even


cdef double _scaled_bessel_k(double nu, double x) nogil:
    """exp(x) K_nu(x) for x > 0."""
    cdef int nl = <int>(nu + 0.5)
    cdef double mu = nu - nl
    cdef double mu2 = mu * mu
    cdef double kmu, k1, ktmp
    cdef double gam1, gam2, gampl, gammi
    cdef double x2, pimu, fact, d, e, fact2, ff, total, total1, p, q, c, dd, delta, ex
    cdef double b, h, delh, q1, q2, a1, a, s, qnew, dels
    cdef int i
    if x < _XMIN:
        _temme_gammas(mu, &gam1, &gam2, &gampl, &gammi)
        x2 = 0.5 * x
        pimu = M_PI * mu
        fact = 1.0 if fabs(pimu) < _EPS else pimu / sin(pimu)
        d = -log(x2)
        e = mu * d
        fact2 = 1.0 if fabs(e) < _EPS else sinh(e) / e
        ff = fact * (gam1 * cosh(e) + gam2 * fact2 * d)
        total = ff
        e = exp(e)
        p = 0.5 * e / gampl
        q = 0.5 / (e * gammi)
        c = 1.0
        dd = x2 * x2
        total1 = p
        for i in range(1, _MAXIT + 1):
            ff = (i * ff + p + q) / (i * i - mu2)
            c *= dd / i
            p /= (i - mu)
            q /= (i + mu)
            delta = c * ff
            total += delta
            total1 += c * (p - i * ff)
            if fabs(delta) < fabs(total) * _EPS:
                break
        ex = exp(x)
        kmu = total * ex
        k1 = total1 * (2.0 / x) * ex
    else:
        b = 2.0 * (1.0 + x)
        d = 1.0 / b
        h = d
        delh = d
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
            q += c * qnew
            b += 2.0
            d = 1.0 / (b + a * d)
            delh = (b * d - 1.0) * delh
            h += delh
            dels = q * delh
            s += dels
            if fabs(dels / s) < _EPS:
                break
        h = a1 * h
        kmu = sqrt(M_PI / (2.0 * x)) / s
        k1 = kmu * (mu + x + 0.5 - h) / x
    for i in range(1, nl + 1):
        ktmp = (mu + i) * (2.0 / x) * k1 + kmu
        kmu = k1
        k1 = ktmp
    return kmu


def temme_gammas(double mu):
    cdef double gam1, gam2, gampl, gammi
    _temme_gammas(mu, &gam1, &gam2, &gampl, &gammi)
    return gam1, gam2, gampl, gammi


def scaled_bessel_k(double nu, x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef double[::1] xv = xa
    out = np.empty_like(xa)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(xv.shape[0]):
            ov[i] = _scaled_bessel_k(nu, xv[i])
    return out.reshape(np.shape(x))


def bessel_k(double nu, x):
    xa = np.asarray(x, dtype=np.float64)
    return scaled_bessel_k(nu, xa) * np.exp(-xa)


def matern_values(d, double theta, double nu):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] da = np.ascontiguousarray(d, dtype=np.float64).ravel()
    cdef double[::1] dv = da
    out = np.empty_like(da)
    cdef double[::1] ov = out
    cdef double scale = 2.0 * sqrt(nu) / theta
    cdef double lognorm = -lgamma(nu) - (nu - 1.0) * log(2.0)
    cdef double xx, val
    cdef Py_ssize_t i
    with nogil:
        for i in range(dv.shape[0]):
            xx = scale * dv[i]
            if xx <= 0.0:
                ov[i] = 1.0
                continue
            val = exp(nu * log(xx) - xx + lognorm) * _scaled_bessel_k(nu, xx)
            if not isfinite(val) or val > 1.0:
                val = 1.0
            ov[i] = val
    return out.reshape(np.shape(d))


cdef void _center_exact(double* w, Py_ssize_t n, double* tmp) nogil:
    cdef Py_ssize_t i
    cdef double mean = 0.0, m = 0.0, q
    cdef long long s = 0, kk, base, rem
    cdef int expo, bits
    for i in range(n):
        mean += w[i]
    mean /= n
    for i in range(n):
        w[i] -= mean
        if fabs(w[i]) > m:
            m = fabs(w[i])
    if m == 0.0 or not isfinite(m):
        return
    bits = 52 - <int>ceil(log2(<double>n)) - 2
    frexp(m, &expo)
    q = ldexp(1.0, expo - bits)
    for i in range(n):
        kk = <long long>rint(w[i] / q)
        tmp[i] = <double>kk
        s += kk
    # floor division so that 0 <= rem < n
    base = s / n
    rem = s - base * n
    if rem < 0:
        base -= 1
        rem += n
    for i in range(n):
        tmp[i] -= <double>base
        if i < rem:
            tmp[i] -= 1.0
        w[i] = tmp[i] * q


def center_exact(w):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wa = np.array(w, dtype=np.float64, copy=True)
    cdef double[::1] wv = wa
    tmp = np.empty_like(wa)
    cdef double[::1] tv = tmp
    if wa.shape[0] > 0:
        _center_exact(&wv[0], wa.shape[0], &tv[0])
    return wa


def icar_gibbs(y, x, V, lam, state, normals, gammas, priors, out, out_w=None):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] Vv = np.ascontiguousarray(V, dtype=np.float64)
    cdef double[::1] lv = np.ascontiguousarray(lam, dtype=np.float64)
    cdef double[::1] st = state
    cdef double[:, ::1] nv = np.ascontiguousarray(normals, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(gammas, dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double[:, ::1] owv
    cdef bint keep_w = out_w is not None
    if keep_w:
        owv = out_w
    cdef Py_ssize_t n = yv.shape[0]
    cdef Py_ssize_t m = nv.shape[0]
    cdef double b_sigma = priors[0]
    cdef double b_tau = priors[1]
    wc_arr = np.array(state[4:], dtype=np.float64)
    w_arr = np.empty(n)
    r_arr = np.empty(n)
    e_arr = np.empty(n)
    coef_arr = np.empty(n)
    tmp_arr = np.empty(n)
    cdef double[::1] wc = wc_arr
    cdef double[::1] w = w_arr
    cdef double[::1] r = r_arr
    cdef double[::1] e = e_arr
    cdef double[::1] coef = coef_arr
    cdef double[::1] tmp = tmp_arr
    cdef double beta = st[0], sigma2 = st[1], tau2 = st[2], mu = st[3]
    cdef double xtx = 0.0, acc, prec, quad, sse, wsum
    cdef Py_ssize_t i, j, t
    cdef int failed = -1
    for i in range(n):
        xtx += xv[i] * xv[i]
        w[i] = wc[i] + mu
    with nogil:
        for t in range(m):
            acc = 0.0
            for i in range(n):
                acc += xv[i] * (yv[i] - w[i])
            beta = acc / xtx + sqrt(sigma2 / xtx) * nv[t, 0]
            for i in range(n):
                r[i] = yv[i] - beta * xv[i]
            for j in range(n):
                e[j] = 0.0
            for i in range(n):
                for j in range(n):
                    e[j] += Vv[i, j] * r[i]
            quad = 0.0
            for j in range(n):
                prec = lv[j] / tau2 + 1.0 / sigma2
                coef[j] = (e[j] / sigma2) / prec + nv[t, 1 + j] / sqrt(prec)
                quad += lv[j] * coef[j] * coef[j]
            mu = 0.0
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += Vv[i, j] * coef[j]
                w[i] = acc
                mu += acc
            mu /= n
            for i in range(n):
                wc[i] = w[i]
            _center_exact(&wc[0], n, &tmp[0])
            sse = 0.0
            wsum = 0.0
            for i in range(n):
                w[i] = wc[i] + mu
                acc = yv[i] - beta * xv[i] - w[i]
                sse += acc * acc
                wsum += wc[i]
            sigma2 = (b_sigma + 0.5 * sse) / gv[t, 0]
            tau2 = (b_tau + 0.5 * quad) / gv[t, 1]
            ov[t, 0] = beta
            ov[t, 1] = sigma2
            ov[t, 2] = tau2
            ov[t, 3] = mu
            ov[t, 4] = wsum
            if keep_w:
                for i in range(n):
                    owv[t, i] = wc[i]
            if not (isfinite(beta) and isfinite(sigma2) and isfinite(tau2)):
                failed = t
                break
    if failed >= 0:
        return failed
    st[0] = beta
    st[1] = sigma2
    st[2] = tau2
    st[3] = mu
    for i in range(n):
        st[4 + i] = wc[i]
    return -1
