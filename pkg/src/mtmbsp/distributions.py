"""Random variate generators used by the Gibbs sampler.

All samplers take a :class:`~mtmbsp.rng.RandomStream` as their last argument
and are vectorised over array-valued parameters (numpy broadcasting rules).
Gamma distributions use the shape/rate convention throughout the package.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.special import expit, log_ndtr

from .errors import NumericalError, ParameterError
from .rng import RandomStream

PG_THRESHOLD = 30
PG_SERIES_TERMS = 200

_TRUNC = 0.64
_PI2 = np.pi**2


# --------------------------------------------------------------------------
# Polya-Gamma
# --------------------------------------------------------------------------

def pg_mean(b, c):
    """Exact mean of PG(b, c): ``b/(2c) tanh(c/2)``, with limit ``b/4`` at 0."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-4
    cs = np.where(small, 1.0, c)
    m = np.where(small, 0.25 - c**2 / 48.0, np.tanh(cs / 2.0) / (2.0 * cs))
    return b * m


def pg_variance(b, c):
    """Exact variance of PG(b, c)."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-2
    cs = np.where(small, 1.0, c)
    e1 = np.exp(-cs)
    # (sinh c - c) / cosh^2(c/2), rewritten to avoid overflow
    ratio = 2.0 * (1.0 - e1 * e1 - 2.0 * cs * e1) / (1.0 + e1) ** 2
    v = np.where(small, 1.0 / 24.0 - c**2 / 120.0 + 17.0 * c**4 / 13440.0,
                 ratio / (4.0 * cs**3))
    return b * v


def _pg_coef(n, x):
    """Alternating-series coefficients a_n(x) of the J*(1, 0) density."""
    k = (n + 0.5) * np.pi
    out = np.empty_like(x)
    hi = x > _TRUNC
    out[hi] = k * np.exp(-0.5 * k * k * x[hi])
    lo = ~hi
    xl = x[lo]
    out[lo] = np.exp(-1.5 * (np.log(0.5 * np.pi) + np.log(xl)) + np.log(k)
                     - 2.0 * (n + 0.5) ** 2 / xl)
    return out


def _truncated_inverse_gaussian(z, gen):
    """IG(1/z, 1) truncated to (0, 0.64); ``z`` is an array of tilts >= 0."""
    out = np.empty_like(z)
    mu_big = z < 1.0 / _TRUNC
    # mean above truncation point: sample from the truncated Levy kernel
    idx = np.flatnonzero(mu_big)
    while idx.size:
        zz = z[idx]
        e1 = gen.standard_exponential(idx.size)
        e2 = gen.standard_exponential(idx.size)
        bad = e1 * e1 > 2.0 * e2 / _TRUNC
        while bad.any():
            nb = int(bad.sum())
            e1[bad] = gen.standard_exponential(nb)
            e2[bad] = gen.standard_exponential(nb)
            bad = e1 * e1 > 2.0 * e2 / _TRUNC
        x = _TRUNC / (1.0 + _TRUNC * e1) ** 2
        alpha = np.exp(-0.5 * zz * zz * x)
        ok = gen.random(idx.size) <= alpha
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    # mean below truncation point: plain IG draws rejected above 0.64
    idx = np.flatnonzero(~mu_big)
    while idx.size:
        mu = 1.0 / z[idx]
        y = gen.standard_normal(idx.size) ** 2
        x = mu + 0.5 * mu * mu * y - 0.5 * mu * np.sqrt(4.0 * mu * y + (mu * y) ** 2)
        flip = gen.random(idx.size) > mu / (mu + x)
        x[flip] = mu[flip] ** 2 / x[flip]
        ok = x <= _TRUNC
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def _pg1(c, gen):
    """Exact PG(1, c) draws (Devroye-type alternating series sampler)."""
    z = 0.5 * np.abs(np.asarray(c, dtype=float).ravel())
    out = np.empty_like(z)
    fz = 0.125 * _PI2 + 0.5 * z * z
    rt = np.sqrt(1.0 / _TRUNC)
    x0 = np.log(fz) + fz * _TRUNC
    xb = x0 - z + log_ndtr(rt * (_TRUNC * z - 1.0))
    xa = x0 + z + log_ndtr(-rt * (_TRUNC * z + 1.0))
    p_exp = expit(-(np.log(4.0 / np.pi) + np.logaddexp(xb, xa)))

    pending = np.arange(z.size)
    while pending.size:
        m = pending.size
        x = np.empty(m)
        use_exp = gen.random(m) < p_exp[pending]
        x[use_exp] = _TRUNC + gen.standard_exponential(int(use_exp.sum())) / fz[pending[use_exp]]
        if (~use_exp).any():
            x[~use_exp] = _truncated_inverse_gaussian(z[pending[~use_exp]], gen)
        s = _pg_coef(0, x)
        y = gen.random(m) * s
        accepted = np.zeros(m, dtype=bool)
        live = np.ones(m, dtype=bool)
        n = 0
        while live.any():
            n += 1
            li = np.flatnonzero(live)
            if n % 2:
                s[li] -= _pg_coef(n, x[li])
                hit = y[li] <= s[li]
                accepted[li[hit]] = True
                live[li[hit]] = False
            else:
                s[li] += _pg_coef(n, x[li])
                miss = y[li] > s[li]
                live[li[miss]] = False
        out[pending[accepted]] = 0.25 * x[accepted]
        pending = pending[~accepted]
    return out


def _pg_series(b, c, gen, terms=PG_SERIES_TERMS):
    """PG(b, c) from the gamma-series definition, truncated with tail-mean correction."""
    b = np.asarray(b, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    k = np.arange(1, terms + 1)
    denom = (k - 0.5) ** 2 + (c[:, None] / (2.0 * np.pi)) ** 2
    g = gen.standard_gamma(np.broadcast_to(b[:, None], denom.shape))
    head = (g / denom).sum(axis=1) / (2.0 * _PI2)
    head_mean = b * (1.0 / denom).sum(axis=1) / (2.0 * _PI2)
    tail = np.maximum(pg_mean(b, c) - head_mean, 0.0)
    return head + tail


def sample_polya_gamma(b, c, s: RandomStream, threshold: int = PG_THRESHOLD):
    """Draw from the Polya-Gamma distribution PG(b, c).

    Shape ``b`` below ``threshold`` is handled exactly as a sum of ``floor(b)``
    unit-shape draws plus, for fractional ``b``, one truncated gamma-series
    draw. Shapes at or above ``threshold`` use a Gaussian with the exact PG
    mean and variance.

    Parameters
    ----------
    b : array_like
        Positive shape(s).
    c : array_like
        Real tilt(s); broadcast against ``b``.
    s : RandomStream
    threshold : int
        Shape above which the moment-matched Gaussian is used.

    Returns
    -------
    ndarray or float
        Positive draws with the broadcast shape of ``b`` and ``c``.
    """
    b_arr, c_arr = np.broadcast_arrays(np.asarray(b, dtype=float), np.asarray(c, dtype=float))
    if np.any(~(b_arr > 0)):
        raise ParameterError("Polya-Gamma shape b must be positive")
    if not np.all(np.isfinite(c_arr)) or not np.all(np.isfinite(b_arr)):
        raise ParameterError("Polya-Gamma parameters must be finite")
    shape = b_arr.shape
    bf, cf = b_arr.ravel(), c_arr.ravel()
    out = np.zeros(bf.size)
    gen = s.gen

    big = bf >= threshold
    if big.any():
        mean = pg_mean(bf[big], cf[big])
        sd = np.sqrt(pg_variance(bf[big], cf[big]))
        out[big] = np.maximum(mean + sd * gen.standard_normal(int(big.sum())), 1e-12 * mean)

    small = np.flatnonzero(~big)
    if small.size:
        whole = np.floor(bf[small]).astype(np.int64)
        if whole.sum():
            draws = _pg1(np.repeat(cf[small], whole), gen)
            owner = np.repeat(np.arange(small.size), whole)
            out[small] += np.bincount(owner, weights=draws, minlength=small.size)
        frac = bf[small] - whole
        has_frac = frac > 1e-12
        if has_frac.any():
            idx = small[has_frac]
            out[idx] += _pg_series(frac[has_frac], cf[idx], gen)
    out = out.reshape(shape)
    return out if shape else float(out)


# --------------------------------------------------------------------------
# Generalised inverse Gaussian
# --------------------------------------------------------------------------

def _gig_logq(x, p, b):
    return (p - 1.0) * np.log(x) - 0.5 * b * (x + 1.0 / x)


def _gig_mode(p, b):
    return np.where(p < 1.0,
                    b / (np.sqrt((1.0 - p) ** 2 + b * b) + 1.0 - p),
                    (np.sqrt((1.0 - p) ** 2 + b * b) - (1.0 - p)) / np.maximum(b, 1e-300))


def _gig_rou_shift(p, b, gen):
    """Ratio-of-uniforms with mode shift; valid for p >= 1 or b > 1."""
    n = p.size
    m = _gig_mode(p, b)
    a2 = -2.0 * (p + 1.0) / b - m
    a1 = 2.0 * m * (p - 1.0) / b - 1.0
    p1 = a1 - a2**2 / 3.0
    q1 = 2.0 * a2**3 / 27.0 - a2 * a1 / 3.0 + m
    phi = np.arccos(np.clip(-q1 * np.sqrt(-27.0 / p1**3) / 2.0, -1.0, 1.0))
    s1 = -np.sqrt(-4.0 * p1 / 3.0)
    root1 = s1 * np.cos(phi / 3.0 + np.pi / 3.0) - a2 / 3.0
    root2 = -s1 * np.cos(phi / 3.0) - a2 / 3.0
    lm = _gig_logq(m, p, b)
    vmin = (root1 - m) * np.exp(0.5 * (_gig_logq(root1, p, b) - lm))
    vmax = (root2 - m) * np.exp(0.5 * (_gig_logq(root2, p, b) - lm))
    out = np.empty(n)
    idx = np.arange(n)
    while idx.size:
        u = gen.random(idx.size)
        v = vmin[idx] + (vmax[idx] - vmin[idx]) * gen.random(idx.size)
        x = v / u + m[idx]
        ok = x > 0
        ok[ok] = 2.0 * np.log(u[ok]) <= _gig_logq(x[ok], p[idx][ok], b[idx][ok]) - lm[idx][ok]
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def _gig_rou_noshift(p, b, gen):
    """Ratio-of-uniforms without mode shift for moderate b and 0 <= p < 1."""
    n = p.size
    m = _gig_mode(p, b)
    log_umax = 0.5 * _gig_logq(m, p, b)
    xplus = ((1.0 + p) + np.sqrt((1.0 + p) ** 2 + b * b)) / b
    vmax = xplus * np.exp(0.5 * _gig_logq(xplus, p, b))
    out = np.empty(n)
    idx = np.arange(n)
    while idx.size:
        u = np.exp(log_umax[idx]) * gen.random(idx.size)
        v = vmax[idx] * gen.random(idx.size)
        x = v / u
        ok = x > 0
        ok[ok] = 2.0 * np.log(u[ok]) <= _gig_logq(x[ok], p[idx][ok], b[idx][ok])
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def _gig_small_b(p, b, gen):
    """Rejection from a three-piece hat for small b and 0 <= p < 1."""
    n = p.size
    m = _gig_mode(p, b)
    x0 = b / (1.0 - p)
    xs = np.maximum(x0, 2.0 / b)
    k1 = np.exp(_gig_logq(m, p, b))
    a1 = k1 * x0
    mid = x0 < 2.0 / b
    k2 = np.where(mid, np.exp(-b), 0.0)
    pos = p > 0
    ps = np.where(pos, p, 1.0)
    a2_pos = k2 * ((2.0 / b) ** ps - x0**ps) / ps
    a2_zero = k2 * np.log(2.0 / b**2)
    a2 = np.where(mid, np.where(pos, a2_pos, a2_zero), 0.0)
    k3 = xs ** (p - 1.0)
    a3 = 2.0 * k3 * np.exp(-xs * b / 2.0) / b
    total = a1 + a2 + a3

    out = np.empty(n)
    idx = np.arange(n)
    while idx.size:
        pi, bi = p[idx], b[idx]
        u = gen.random(idx.size)
        v = total[idx] * gen.random(idx.size)
        x = np.empty(idx.size)
        h = np.empty(idx.size)
        c1 = v <= a1[idx]
        c2 = ~c1 & (v <= a1[idx] + a2[idx])
        c3 = ~(c1 | c2)
        x[c1] = x0[idx][c1] * v[c1] / a1[idx][c1]
        h[c1] = k1[idx][c1]
        if c2.any():
            j = idx[c2]
            w = v[c2] - a1[j]
            x[c2] = np.where(pos[j],
                             (x0[j] ** ps[j] + w * ps[j] / np.where(k2[j] > 0, k2[j], 1.0)) ** (1.0 / ps[j]),
                             bi[c2] * np.exp(w * np.exp(bi[c2])))
            h[c2] = k2[j] * x[c2] ** (pi[c2] - 1.0)
        if c3.any():
            j = idx[c3]
            zz = np.exp(-xs[j] * b[j] / 2.0) - b[j] * (v[c3] - a1[j] - a2[j]) / (2.0 * k3[j])
            x[c3] = -2.0 / b[j] * np.log(zz)
            h[c3] = k3[j] * np.exp(-x[c3] * b[j] / 2.0)
        ok = np.isfinite(x) & (x > 0)
        ok[ok] = np.log(u[ok] * h[ok]) <= _gig_logq(x[ok], pi[ok], bi[ok])
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


# Below this value of sqrt(chi*psi) the chi -> 0 (Gamma) limit is used; the
# total-variation error is O(b^2 log(1/b)).
_GIG_GAMMA_LIMIT = 1e-7


def _gig_standard(p, b, gen):
    """Draw Y with density proportional to y^(p-1) exp(-b (y + 1/y) / 2), p >= 0."""
    out = np.empty(p.size)
    shift = (p >= 1.0) | (b > 1.0)
    noshift = ~shift & (b >= np.minimum(0.5, 2.0 * np.sqrt(np.maximum(1.0 - p, 0.0)) / 3.0))
    hat = ~shift & ~noshift
    for mask, fn in ((shift, _gig_rou_shift), (noshift, _gig_rou_noshift), (hat, _gig_small_b)):
        if mask.any():
            out[mask] = fn(p[mask], b[mask], gen)
    return out


def sample_gig(chi, psi, lam, s: RandomStream):
    """Draw from GIG with density proportional to ``x^(lam-1) exp(-(chi/x + psi*x)/2)``.

    ``chi = 0`` reduces to Gamma(lam, rate psi/2) and ``psi = 0`` to the
    reciprocal of Gamma(-lam, rate chi/2).
    """
    chi, psi, lam = np.broadcast_arrays(np.asarray(chi, dtype=float),
                                        np.asarray(psi, dtype=float),
                                        np.asarray(lam, dtype=float))
    shape = chi.shape
    chi, psi, lam = chi.ravel(), psi.ravel(), lam.ravel()
    if (np.any(chi < 0) or np.any(psi < 0) or not np.all(np.isfinite(chi))
            or not np.all(np.isfinite(psi)) or not np.all(np.isfinite(lam))):
        raise ParameterError("GIG requires finite chi >= 0 and psi >= 0")
    if np.any((chi == 0) & (psi == 0)):
        raise ParameterError("GIG requires chi and psi not both zero")
    if np.any((chi == 0) & (lam <= 0)):
        raise ParameterError("GIG with chi = 0 requires lam > 0")
    if np.any((psi == 0) & (lam >= 0)):
        raise ParameterError("GIG with psi = 0 requires lam < 0")

    gen = s.gen
    out = np.empty(chi.size)
    gamma_case = chi == 0
    inv_case = psi == 0
    if gamma_case.any():
        out[gamma_case] = gen.standard_gamma(lam[gamma_case]) / (psi[gamma_case] / 2.0)
    if inv_case.any():
        out[inv_case] = (chi[inv_case] / 2.0) / gen.standard_gamma(-lam[inv_case])

    gen_case = ~(gamma_case | inv_case)
    if gen_case.any():
        c, ps, lm = chi[gen_case], psi[gen_case], lam[gen_case]
        flip = lm < 0
        # 1/X ~ GIG(-lam, psi, chi)
        c, ps = np.where(flip, ps, c), np.where(flip, c, ps)
        lm = np.abs(lm)
        b = np.sqrt(c * ps)
        x = np.empty(c.size)
        tiny = (b < _GIG_GAMMA_LIMIT) & (lm > 0)
        if tiny.any():
            x[tiny] = gen.standard_gamma(lm[tiny]) / (ps[tiny] / 2.0)
        rest = ~tiny
        if rest.any():
            x[rest] = np.sqrt(c[rest] / ps[rest]) * _gig_standard(lm[rest], b[rest], gen)
        out[gen_case] = np.where(flip, 1.0 / x, x)
    out = out.reshape(shape)
    return out if shape else float(out)


# --------------------------------------------------------------------------
# Gaussian, Wishart, gamma, CRT
# --------------------------------------------------------------------------

def safe_cholesky(a):
    """Lower Cholesky factor with scale-aware escalating diagonal jitter.

    Jitter starts at ``1e-10 * trace/q`` and grows tenfold up to
    ``1e-6 * trace/q``; beyond that :class:`NumericalError` is raised.
    """
    a = np.asarray(a, dtype=float)
    a = 0.5 * (a + a.T)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    q = a.shape[0]
    scale = abs(np.trace(a)) / q if q else 1.0
    if not np.isfinite(scale) or scale == 0:
        scale = 1.0
    eye = np.eye(q)
    for e in range(-10, -5):
        try:
            return np.linalg.cholesky(a + (10.0**e) * scale * eye)
        except np.linalg.LinAlgError:
            continue
    try:
        min_eig = float(np.linalg.eigvalsh(a)[0])
    except np.linalg.LinAlgError:
        min_eig = float("nan")
    raise NumericalError("matrix is not positive definite after maximal jitter",
                         min_eigenvalue=min_eig)


def sample_mvn(mean, cov, s: RandomStream):
    """One draw from N(mean, cov)."""
    mean = np.asarray(mean, dtype=float)
    chol = safe_cholesky(cov)
    return mean + chol @ s.gen.standard_normal(mean.shape[0])


def sample_inverse_wishart(df, scale, s: RandomStream):
    """Inverse-Wishart draw with mean ``scale / (df - q - 1)`` via Bartlett's decomposition."""
    scale = np.asarray(scale, dtype=float)
    q = scale.shape[0]
    if not df > q - 1:
        raise ParameterError(f"inverse-Wishart needs df > q - 1 = {q - 1}, got {df}")
    gen = s.gen
    a = np.zeros((q, q))
    a[np.diag_indices(q)] = np.sqrt(gen.chisquare(df - np.arange(q)))
    a[np.tril_indices(q, -1)] = gen.standard_normal(q * (q - 1) // 2)
    # A A^T ~ Wishart(df, I). With scale = C C^T, L = C^{-T} is a root of
    # scale^{-1}, so Sigma = (L A A^T L^T)^{-1} = C A^{-T} A^{-1} C^T.
    c = safe_cholesky(scale)
    ainv_c = linalg.solve_triangular(a, c.T, lower=True)  # A^{-1} C^T
    sigma = ainv_c.T @ ainv_c
    return 0.5 * (sigma + sigma.T)


def sample_gamma(shape, rate, s: RandomStream):
    """Gamma draw(s), shape/rate parameterisation (mean ``shape/rate``)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(rate > 0)):
        raise ParameterError("Gamma shape and rate must be positive")
    shape, rate = np.broadcast_arrays(shape, rate)
    out = s.gen.standard_gamma(shape) / rate
    return out if np.ndim(out) else float(out)


def sample_crt(y, r, s: RandomStream):
    """Chinese-restaurant-table count: sum of Bernoulli(r / (r + j - 1)), j = 1..y."""
    y_arr, r_arr = np.broadcast_arrays(np.asarray(y), np.asarray(r, dtype=float))
    if np.any(y_arr < 0) or np.any(y_arr != np.floor(y_arr)):
        raise ParameterError("CRT count y must be a nonnegative integer")
    if np.any(~(r_arr > 0)):
        raise ParameterError("CRT concentration r must be positive")
    shape = y_arr.shape
    yf = y_arr.ravel().astype(np.int64)
    rf = r_arr.ravel()
    total = int(yf.sum())
    out = np.zeros(yf.size, dtype=np.int64)
    if total:
        owner = np.repeat(np.arange(yf.size), yf)
        starts = np.cumsum(yf) - yf
        j = np.arange(total) - np.repeat(starts, yf)  # j - 1, zero based
        prob = rf[owner] / (rf[owner] + j)
        hits = s.gen.random(total) < prob
        out = np.bincount(owner, weights=hits, minlength=yf.size).astype(np.int64)
    out = out.reshape(shape)
    return out if shape else int(out)


# --------------------------------------------------------------------------
# Gaussian posterior for the linear model with independent Gaussian prior
# --------------------------------------------------------------------------

def fast_gaussian_posterior(Phi, alpha, D, s: RandomStream, factor=None):
    """Exact draw from N(A^{-1} Phi^T alpha, A^{-1}), A = Phi^T Phi + diag(D)^{-1}.

    Works through an n x n system, so the cost is O(n^2 p) instead of O(p^3).
    ``factor`` is an optional precomputed ``cho_factor`` of
    ``Phi diag(D) Phi^T + I``, for callers that reuse one design.
    """
    Phi = np.asarray(Phi, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    D = np.asarray(D, dtype=float)
    if np.any(~(D > 0)):
        raise ParameterError("prior variances D must be positive")
    n, p = Phi.shape
    gen = s.gen
    w = np.sqrt(D) * gen.standard_normal(p)
    delta = gen.standard_normal(n)
    v = Phi @ w + delta
    phid = Phi * D
    try:
        if factor is None:
            m = phid @ Phi.T
            m[np.diag_indices(n)] += 1.0
            factor = linalg.cho_factor(m, lower=True, check_finite=False)
        sol = linalg.cho_solve(factor, alpha - v, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"fast Gaussian sampler solve failed: {exc}") from exc
    return w + phid.T @ sol


def dense_gaussian_posterior(Phi, alpha, D, s: RandomStream):
    """Same target as :func:`fast_gaussian_posterior` via a p x p Cholesky."""
    Phi = np.asarray(Phi, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    D = np.asarray(D, dtype=float)
    if np.any(~(D > 0)):
        raise ParameterError("prior variances D must be positive")
    a = Phi.T @ Phi
    a[np.diag_indices_from(a)] += 1.0 / D
    chol = safe_cholesky(a)
    mean = linalg.cho_solve((chol, True), Phi.T @ alpha, check_finite=False)
    z = s.gen.standard_normal(a.shape[0])
    return mean + linalg.solve_triangular(chol.T, z, lower=False, check_finite=False)


def sample_gaussian_posterior(Phi, alpha, D, s: RandomStream):
    """Dispatch to the fast sampler when p > n, else the dense one."""
    n, p = np.shape(Phi)
    if p > n:
        return fast_gaussian_posterior(Phi, alpha, D, s)
    return dense_gaussian_posterior(Phi, alpha, D, s)
