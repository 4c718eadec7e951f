"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The public names at the bottom (``psi``, ``trigamma``, ``hln``,
``render_lines``, ``nnls_batch``) point at the numba versions unless the
``DELTA_METROLOGY_NUMBA`` flag disables them.  Both flavours stay importable
as ``*_nb`` / ``*_np`` for the benchmark and the cross-check tests.
"""
import math

import numpy as np
from scipy.special import ndtr

from ._jit import USE_NUMBA, njit, prange

# Shift arguments up to this before using the asymptotic series; with the
# seven Bernoulli terms below the truncation error is < 1e-16 relative.
_ASYMPTOTIC_MIN = 10.0


# --------------------------------------------------------------------------
# digamma / trigamma
# --------------------------------------------------------------------------

def _psi_scalar(x):
    if x <= 0.0 and x == math.floor(x):
        return math.nan
    reflect = 0.0
    if x < 0.5:
        # psi(x) = psi(1 - x) - pi / tan(pi x)
        reflect = -math.pi / math.tan(math.pi * x)
        x = 1.0 - x
    acc = 0.0
    while x < _ASYMPTOTIC_MIN:
        acc -= 1.0 / x
        x += 1.0
    z = 1.0 / (x * x)
    series = z * (1.0 / 12 - z * (1.0 / 120 - z * (1.0 / 252 - z * (
        1.0 / 240 - z * (1.0 / 132 - z * (691.0 / 32760 - z / 12.0))))))
    return math.log(x) - 0.5 / x - series + acc + reflect


def _trigamma_scalar(x):
    if x <= 0.0 and x == math.floor(x):
        return math.nan
    x0 = x
    if x < 0.5:
        x = 1.0 - x
    acc = 0.0
    while x < _ASYMPTOTIC_MIN:
        acc += 1.0 / (x * x)
        x += 1.0
    z = 1.0 / (x * x)
    series = (1.0 / x) * (1.0 + 0.5 / x + z * (1.0 / 6 - z * (1.0 / 30 - z * (
        1.0 / 42 - z * (1.0 / 30 - z * (5.0 / 66 - z * (691.0 / 2730 - z * 7.0 / 6)))))))
    val = series + acc
    if x0 < 0.5:
        # psi'(1 - x) + psi'(x) = pi^2 / sin^2(pi x)
        s = math.sin(math.pi * x0)
        val = math.pi * math.pi / (s * s) - val
    return val


_psi_scalar_nb = njit(_psi_scalar)
_trigamma_scalar_nb = njit(_trigamma_scalar)


@njit
def psi_nb(x):
    flat = x.ravel()
    out = np.empty(flat.size)
    for i in range(flat.size):
        out[i] = _psi_scalar_nb(flat[i])
    return out.reshape(x.shape)


@njit
def trigamma_nb(x):
    flat = x.ravel()
    out = np.empty(flat.size)
    for i in range(flat.size):
        out[i] = _trigamma_scalar_nb(flat[i])
    return out.reshape(x.shape)


def psi_np(x):
    x = np.asarray(x, dtype=float)
    pole = (x <= 0) & (x == np.floor(x))
    refl = x < 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        extra = np.where(refl, -np.pi / np.tan(np.pi * x), 0.0)
    xs = np.where(refl, 1.0 - x, x)
    xs = np.where(pole, _ASYMPTOTIC_MIN, xs)
    acc = np.zeros_like(xs)
    low = xs < _ASYMPTOTIC_MIN
    while low.any():
        acc[low] -= 1.0 / xs[low]
        xs[low] += 1.0
        low = xs < _ASYMPTOTIC_MIN
    z = 1.0 / (xs * xs)
    series = z * (1.0 / 12 - z * (1.0 / 120 - z * (1.0 / 252 - z * (
        1.0 / 240 - z * (1.0 / 132 - z * (691.0 / 32760 - z / 12.0))))))
    out = np.log(xs) - 0.5 / xs - series + acc + extra
    return np.where(pole, np.nan, out)


def trigamma_np(x):
    x = np.asarray(x, dtype=float)
    pole = (x <= 0) & (x == np.floor(x))
    refl = x < 0.5
    xs = np.where(refl, 1.0 - x, x)
    xs = np.where(pole, _ASYMPTOTIC_MIN, xs)
    acc = np.zeros_like(xs)
    low = xs < _ASYMPTOTIC_MIN
    while low.any():
        acc[low] += 1.0 / (xs[low] * xs[low])
        xs[low] += 1.0
        low = xs < _ASYMPTOTIC_MIN
    z = 1.0 / (xs * xs)
    series = (1.0 / xs) * (1.0 + 0.5 / xs + z * (1.0 / 6 - z * (1.0 / 30 - z * (
        1.0 / 42 - z * (1.0 / 30 - z * (5.0 / 66 - z * (691.0 / 2730 - z * 7.0 / 6)))))))
    val = series + acc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.sin(np.pi * x)
        val = np.where(refl, np.pi**2 / (s * s) - val, val)
    return np.where(pole, np.nan, val)


# --------------------------------------------------------------------------
# HLN weak-localization lineshape (units of sigma_0)
# --------------------------------------------------------------------------
# f(B) = psi(1/2 + Bphi/B) - psi(1/2 + BL/B) + ln(BL/Bphi), and
# ln(BL/Bphi) = ln(2 Lphi^2 / L^2).  Derivatives are taken with respect to
# ln L and ln Lphi (Bphi ~ Lphi^-2, BL ~ L^-2).

# Below B = min(B_phi, B_L) / HLN_SERIES_X the digamma difference is replaced
# by the large-argument expansion psi(1/2 + x) = ln x + sum_k c_k x^(-2k),
# c_k = -B_2k(1/2) / (2k), whose logs cancel against ln(B_L / B_phi).  At the
# switch point the dropped x^-10 term and the cancellation error of the direct
# difference are both ~1e-11 relative.
HLN_SERIES_X = 20.0
_C1, _C2, _C3, _C4 = 1.0 / 24.0, -7.0 / 960.0, 31.0 / 8064.0, -127.0 / 30720.0


def _hln_series(u):
    """sum_k c_k u^k and sum_k 2k c_k u^k for u = x^-2 (scalar or array)."""
    s = u * (_C1 + u * (_C2 + u * (_C3 + u * _C4)))
    d = u * (2.0 * _C1 + u * (4.0 * _C2 + u * (6.0 * _C3 + u * 8.0 * _C4)))
    return s, d


_hln_series_nb = njit(_hln_series)


@njit
def hln_nb(b, b_phi, b_l):
    n = b.size
    f = np.empty(n)
    d_lnl = np.empty(n)
    d_lnphi = np.empty(n)
    log_ratio = math.log(b_l / b_phi)
    for i in range(n):
        bi = abs(b[i])
        if bi == 0.0:
            f[i] = 0.0
            d_lnl[i] = 0.0
            d_lnphi[i] = 0.0
            continue
        xp = b_phi / bi
        xl = b_l / bi
        if min(xp, xl) > HLN_SERIES_X:
            sp, dp = _hln_series_nb((bi / b_phi) ** 2)
            sl, dl = _hln_series_nb((bi / b_l) ** 2)
            f[i] = sp - sl
            d_lnl[i] = -2.0 * dl
            d_lnphi[i] = 2.0 * dp
            continue
        f[i] = _psi_scalar_nb(0.5 + xp) - _psi_scalar_nb(0.5 + xl) + log_ratio
        d_lnl[i] = 2.0 * (xl * _trigamma_scalar_nb(0.5 + xl) - 1.0)
        d_lnphi[i] = 2.0 * (1.0 - xp * _trigamma_scalar_nb(0.5 + xp))
    return f, d_lnl, d_lnphi


def hln_np(b, b_phi, b_l):
    b = np.abs(np.asarray(b, dtype=float))
    zero = b == 0
    safe = np.where(zero, 1.0, b)
    ip, il = safe / b_phi, safe / b_l
    series = np.minimum(b_phi, b_l) / safe > HLN_SERIES_X
    xp = np.where(series, 1.0, b_phi / safe)
    xl = np.where(series, 1.0, b_l / safe)
    f = psi_np(0.5 + xp) - psi_np(0.5 + xl) + math.log(b_l / b_phi)
    d_lnl = 2.0 * (xl * trigamma_np(0.5 + xl) - 1.0)
    d_lnphi = 2.0 * (1.0 - xp * trigamma_np(0.5 + xp))
    sp, dp = _hln_series(ip * ip)
    sl, dl = _hln_series(il * il)
    f = np.where(series, sp - sl, f)
    d_lnl = np.where(series, -2.0 * dl, d_lnl)
    d_lnphi = np.where(series, 2.0 * dp, d_lnphi)
    return (np.where(zero, 0.0, f), np.where(zero, 0.0, d_lnl),
            np.where(zero, 0.0, d_lnphi))


# --------------------------------------------------------------------------
# Gaussian lines integrated over bins
# --------------------------------------------------------------------------

@njit
def render_lines_nb(edges, centers, areas, sigmas):
    nbin = edges.size - 1
    out = np.zeros(nbin)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for j in range(centers.size):
        a = areas[j]
        if a == 0.0:
            continue
        c = centers[j]
        s = sigmas[j]
        # +-12 sigma window; the tail beyond is below double precision
        lo = np.searchsorted(edges, c - 12.0 * s) - 1
        hi = np.searchsorted(edges, c + 12.0 * s) + 1
        if lo < 0:
            lo = 0
        if hi > nbin:
            hi = nbin
        prev = 0.5 * math.erfc(-(edges[lo] - c) / s * inv_sqrt2)
        for k in range(lo, hi):
            cur = 0.5 * math.erfc(-(edges[k + 1] - c) / s * inv_sqrt2)
            out[k] += a * (cur - prev)
            prev = cur
    return out


def render_lines_np(edges, centers, areas, sigmas):
    edges = np.asarray(edges, dtype=float)
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    if centers.size == 0:
        return np.zeros(edges.size - 1)
    areas = np.broadcast_to(np.asarray(areas, dtype=float), centers.shape)
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), centers.shape)
    cdf = ndtr((edges[:, None] - centers[None, :]) / sigmas[None, :])
    return np.diff(cdf, axis=0) @ areas


# --------------------------------------------------------------------------
# Mixed-constraint NNLS on per-pixel Poisson-weighted normal equations
# --------------------------------------------------------------------------
# status codes
NNLS_OK = 0
NNLS_MAXITER = 1
NNLS_SINGULAR = 2


# relative Cholesky pivot below which a passive subset counts as singular
PIVOT_RTOL = 1e-12


def _solve_passive(g, b, passive):
    """Solve the passive block of G z = b by Cholesky; ok=False when a pivot
    collapses (collinear columns)."""
    n = b.size
    idx = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        if passive[i]:
            idx[m] = i
            m += 1
    z = np.zeros(n)
    if m == 0:
        return z, True
    low = np.zeros((m, m))
    rhs = np.empty(m)
    dmax = 0.0
    for a in range(m):
        rhs[a] = b[idx[a]]
        dmax = max(dmax, g[idx[a], idx[a]])
    for a in range(m):
        for c in range(a + 1):
            acc = g[idx[a], idx[c]]
            for k in range(c):
                acc -= low[a, k] * low[c, k]
            if a == c:
                if not acc > PIVOT_RTOL * dmax:
                    return z, False
                low[a, a] = math.sqrt(acc)
            else:
                low[a, c] = acc / low[c, c]
    # forward then back substitution
    u = np.empty(m)
    for a in range(m):
        acc = rhs[a]
        for k in range(a):
            acc -= low[a, k] * u[k]
        u[a] = acc / low[a, a]
    sol = np.empty(m)
    for a in range(m - 1, -1, -1):
        acc = u[a]
        for k in range(a + 1, m):
            acc -= low[k, a] * sol[k]
        sol[a] = acc / low[a, a]
    for a in range(m):
        z[idx[a]] = sol[a]
    return z, True


def _make_nnls_gram(solve_passive):
    def nnls_gram(g, b, constrained, max_iter):
        """Lawson-Hanson active set on G x = b; free variables never leave P.

        ``g`` must be symmetric positive definite on every passive subset
        (columns are unit-scaled by the caller).
        """
        n = b.size
        passive = np.empty(n, dtype=np.bool_)
        for i in range(n):
            passive[i] = not constrained[i]
        x, ok = solve_passive(g, b, passive)
        if not ok:
            return x, NNLS_SINGULAR
        tol = 1e-13 * max(1.0, np.max(np.abs(b)))
        it = 0
        while True:
            w = b - g @ x
            j = -1
            best = tol
            for i in range(n):
                if constrained[i] and not passive[i] and w[i] > best:
                    best = w[i]
                    j = i
            if j < 0:
                break
            passive[j] = True
            while True:
                it += 1
                if it > max_iter:
                    return x, NNLS_MAXITER
                z, ok = solve_passive(g, b, passive)
                if not ok:
                    return x, NNLS_SINGULAR
                feasible = True
                for i in range(n):
                    if constrained[i] and passive[i] and z[i] <= 0.0:
                        feasible = False
                if feasible:
                    x = z
                    break
                alpha = 1.0
                for i in range(n):
                    if constrained[i] and passive[i] and z[i] <= 0.0:
                        step = x[i] / (x[i] - z[i])
                        if step < alpha:
                            alpha = step
                x = x + alpha * (z - x)
                for i in range(n):
                    if constrained[i] and passive[i] and x[i] <= 1e-15 * max(1.0, abs(z[i])):
                        passive[i] = False
                        x[i] = 0.0
        return x, NNLS_OK

    return nnls_gram


_nnls_gram = _make_nnls_gram(_solve_passive)
_solve_passive_nb = njit(_solve_passive)
_nnls_gram_nb = njit(cache=False)(_make_nnls_gram(_solve_passive_nb))


def _finish(a, y, w, x_scaled, scale, g, status):
    """Unscale, covariance from the full weighted normal matrix, chi^2."""
    n = x_scaled.size
    x = x_scaled / scale
    err = np.full(n, np.nan)
    # amplitudes are only identifiable (and errors defined) for full-rank G
    if status != NNLS_SINGULAR and not _solve_passive(g, np.zeros(n), np.ones(n, bool))[1]:
        status = NNLS_SINGULAR
    if status != NNLS_SINGULAR:
        cov = np.linalg.inv(g)
        for i in range(n):
            if cov[i, i] >= 0:
                err[i] = math.sqrt(cov[i, i]) / scale[i]
    r = y - a @ x
    return x, err, float(np.sum(w * r * r)), float(math.sqrt(np.sum(r * r))), status


@njit(parallel=True)
def nnls_batch_nb(a, y, var, constrained, max_iter):
    npix, nbin = y.shape
    n = a.shape[1]
    x_out = np.zeros((npix, n))
    e_out = np.full((npix, n), np.nan)
    chi2 = np.zeros(npix)
    rnorm = np.zeros(npix)
    status = np.zeros(npix, dtype=np.int64)
    for p in prange(npix):
        g = np.zeros((n, n))
        b = np.zeros(n)
        for k in range(nbin):
            yk = y[p, k]
            wk = 1.0 / var[p, k]
            for i in range(n):
                awi = a[k, i] * wk
                if awi == 0.0:
                    continue
                b[i] += awi * yk
                for j in range(i + 1):
                    g[i, j] += awi * a[k, j]
        for i in range(n):
            for j in range(i):
                g[j, i] = g[i, j]
        scale = np.empty(n)
        for i in range(n):
            scale[i] = math.sqrt(g[i, i]) if g[i, i] > 0 else 1.0
        for i in range(n):
            b[i] /= scale[i]
            for j in range(n):
                g[i, j] /= scale[i] * scale[j]
        xs, st = _nnls_gram_nb(g, b, constrained, max_iter)
        for i in range(n):
            x_out[p, i] = xs[i] / scale[i]
        if st != NNLS_SINGULAR and not _solve_passive_nb(g, np.zeros(n), np.ones(n, np.bool_))[1]:
            st = NNLS_SINGULAR
        if st != NNLS_SINGULAR:
            cov = np.linalg.inv(g)
            for i in range(n):
                if cov[i, i] >= 0:
                    e_out[p, i] = math.sqrt(cov[i, i]) / scale[i]
        c2 = 0.0
        r2 = 0.0
        for k in range(nbin):
            model = 0.0
            for i in range(n):
                model += a[k, i] * x_out[p, i]
            r = y[p, k] - model
            c2 += r * r / var[p, k]
            r2 += r * r
        chi2[p] = c2
        rnorm[p] = math.sqrt(r2)
        status[p] = st
    return x_out, e_out, chi2, rnorm, status


def nnls_batch_np(a, y, var, constrained, max_iter, workers=None):
    a = np.ascontiguousarray(a, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    constrained = np.asarray(constrained, dtype=bool)
    npix = y.shape[0]
    n = a.shape[1]
    w = 1.0 / var
    # G_p = A^T diag(w_p) A, b_p = A^T diag(w_p) y_p, stacked over pixels
    gram = np.einsum("pk,ki,kj->pij", w, a, a, optimize=True)
    rhs = (w * y) @ a
    diag = np.einsum("pii->pi", gram)
    scale = np.where(diag > 0, np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    gram = gram / (scale[:, :, None] * scale[:, None, :])
    rhs = rhs / scale

    x_out = np.zeros((npix, n))
    e_out = np.full((npix, n), np.nan)
    chi2 = np.zeros(npix)
    rnorm = np.zeros(npix)
    status = np.zeros(npix, dtype=np.int64)

    def one(p):
        xs, st = _nnls_gram(gram[p], rhs[p], constrained, max_iter)
        return p, _finish(a, y[p], w[p], xs, scale[p], gram[p], st)

    if workers and workers > 1 and npix > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(npix)))
    else:
        results = [one(p) for p in range(npix)]
    for p, (x, err, c2, rn, st) in results:
        x_out[p] = x
        e_out[p] = err
        chi2[p] = c2
        rnorm[p] = rn
        status[p] = st
    return x_out, e_out, chi2, rnorm, status


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def psi(x):
    x = np.asarray(x, dtype=float)
    return psi_nb(x) if USE_NUMBA else psi_np(x)


def trigamma(x):
    x = np.asarray(x, dtype=float)
    return trigamma_nb(x) if USE_NUMBA else trigamma_np(x)


def hln(b, b_phi, b_l):
    b = np.ascontiguousarray(np.atleast_1d(np.asarray(b, dtype=float)).ravel())
    if USE_NUMBA:
        return hln_nb(b, float(b_phi), float(b_l))
    return hln_np(b, float(b_phi), float(b_l))


def render_lines(edges, centers, areas, sigmas):
    edges = np.ascontiguousarray(edges, dtype=float)
    centers = np.ascontiguousarray(np.atleast_1d(centers), dtype=float)
    areas = np.ascontiguousarray(np.broadcast_to(areas, centers.shape), dtype=float)
    sigmas = np.ascontiguousarray(np.broadcast_to(sigmas, centers.shape), dtype=float)
    if USE_NUMBA:
        return render_lines_nb(edges, centers, areas, sigmas)
    return render_lines_np(edges, centers, areas, sigmas)


def nnls_batch(a, y, constrained, max_iter=500, workers=None, variance=None):
    """Solve min ||W^1/2 (y_p - A x_p)|| per pixel, x_i >= 0 where constrained.

    ``W = diag(1 / variance_p)`` with ``variance`` defaulting to
    ``max(y_p, 1)``.  Returns (x, stderr, chi2, residual_norm, status) with
    one row per pixel.
    """
    a = np.ascontiguousarray(a, dtype=float)
    y = np.ascontiguousarray(np.atleast_2d(y), dtype=float)
    if variance is None:
        var = np.maximum(y, 1.0)
    else:
        var = np.ascontiguousarray(np.broadcast_to(variance, y.shape), dtype=float)
        if not np.all(var > 0):
            raise ValueError("variance must be strictly positive")
    constrained = np.ascontiguousarray(constrained, dtype=np.bool_)
    if USE_NUMBA:
        return nnls_batch_nb(a, y, var, constrained, int(max_iter))
    return nnls_batch_np(a, y, var, constrained, int(max_iter), workers=workers)
