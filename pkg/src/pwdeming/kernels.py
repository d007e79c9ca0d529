"""Hot numeric kernels.

Every kernel exists twice: a loop form compiled with ``numba.njit`` and a
vectorized pure-numpy form.  The public wrappers at the bottom dispatch on the
active backend, which defaults to numba when it imports and can be forced to
numpy with ``PWDEMING_DISABLE_NUMBA=1`` (or :func:`use_backend` at runtime).
"""

from __future__ import annotations

import math
import os
import types
from contextlib import contextmanager

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

_DISABLED = os.environ.get("PWDEMING_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
    "on",
}
_backend = "numba" if HAVE_NUMBA and not _DISABLED else "numpy"

# status codes shared by the known-profile alternation kernels
KNOWN_CONVERGED = 1
KNOWN_MAXITER = 0
KNOWN_BAD_VARIANCE = -2
KNOWN_SINGULAR = -3


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextmanager
def use_backend(name: str):
    old = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(old)


# IEEE-unsafe reassociation is fine here; NaN/inf semantics are kept.
_FASTMATH = {"nsz", "arcp", "contract", "afn", "reassoc"}


def _njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True, fastmath=_FASTMATH)(fn)
    return fn


# --------------------------------------------------------------------------
# profile evaluation
# --------------------------------------------------------------------------


def _pvar_py(code, par, mu):
    if code == 0:
        return par[0]
    elif code == 1:
        t = par[0] * mu
        return t * t
    elif code == 2:
        t = par[1] * mu
        return par[0] * par[0] + t * t
    elif code == 3:
        t = par[0] + par[1] * mu
        return t * t
    else:
        m = mu if mu > 0.0 else 0.0
        return par[0] + par[1] * m ** par[2]


_pvar_nb = _njit(_pvar_py)


def pvar_np(code, par, mu):
    mu = np.asarray(mu, dtype=float)
    if code == 0:
        return np.full(mu.shape, par[0])
    if code == 1:
        return (par[0] * mu) ** 2
    if code == 2:
        return par[0] ** 2 + (par[1] * mu) ** 2
    if code == 3:
        return (par[0] + par[1] * mu) ** 2
    return par[0] + par[1] * np.maximum(mu, 0.0) ** par[2]


# --------------------------------------------------------------------------
# known-profile alternation
# --------------------------------------------------------------------------


def _known_fit_loop(x, y, gcode, gpar, hcode, hpar, alpha, beta, mu0, scale,
                    tol_ab, tol_l, maxit, trace):
    n = x.shape[0]
    mu = mu0.copy()
    g = np.empty(n)
    h = np.empty(n)
    l_old = np.inf
    l_new = np.inf
    status = KNOWN_MAXITER
    it_done = 0
    for it in range(maxit):
        for i in range(n):
            g[i] = _pvar_nb(gcode, gpar, mu[i])
            h[i] = _pvar_nb(hcode, hpar, alpha + beta * mu[i])
            if not (g[i] > 0.0 and h[i] > 0.0):
                return alpha, beta, mu, l_new, KNOWN_BAD_VARIANCE, it
        sw = 0.0
        sm = 0.0
        sy = 0.0
        smm = 0.0
        smy = 0.0
        for i in range(n):
            mu[i] = (h[i] * x[i] + g[i] * beta * (y[i] - alpha)) / (h[i] + g[i] * beta * beta)
            w = 1.0 / h[i]
            sw += w
            sm += w * mu[i]
            sy += w * y[i]
        mbar = sm / sw
        ybar = sy / sw
        for i in range(n):
            w = 1.0 / h[i]
            dm = mu[i] - mbar
            smm += w * dm * dm
            smy += w * dm * (y[i] - ybar)
        if not smm > 0.0:
            return alpha, beta, mu, l_new, KNOWN_SINGULAR, it
        b_new = smy / smm
        a_new = ybar - b_new * mbar
        l_new = 0.0
        for i in range(n):
            gi = _pvar_nb(gcode, gpar, mu[i])
            hi = _pvar_nb(hcode, hpar, a_new + b_new * mu[i])
            if not (gi > 0.0 and hi > 0.0):
                return a_new, b_new, mu, l_new, KNOWN_BAD_VARIANCE, it + 1
            dx = x[i] - mu[i]
            dy = y[i] - a_new - b_new * mu[i]
            l_new += dx * dx / gi + dy * dy / hi + math.log(gi) + math.log(hi)
        trace[it] = l_new
        dab = max(abs(a_new - alpha) / scale, abs(b_new - beta))
        dl = abs(l_new - l_old) / max(abs(l_new), 1.0)
        alpha = a_new
        beta = b_new
        it_done = it + 1
        if dab < tol_ab and dl < tol_l:
            status = KNOWN_CONVERGED
            break
        l_old = l_new
    return alpha, beta, mu, l_new, status, it_done


_known_fit_nb = _njit(_known_fit_loop)


def _known_fit_np(x, y, gcode, gpar, hcode, hpar, alpha, beta, mu0, scale,
                  tol_ab, tol_l, maxit, trace):
    mu = mu0.copy()
    l_old = np.inf
    l_new = np.inf
    it_done = 0
    for it in range(maxit):
        g = pvar_np(gcode, gpar, mu)
        h = pvar_np(hcode, hpar, alpha + beta * mu)
        if not (np.all(g > 0) and np.all(h > 0)):
            return alpha, beta, mu, l_new, KNOWN_BAD_VARIANCE, it
        mu = (h * x + g * beta * (y - alpha)) / (h + g * beta * beta)
        w = 1.0 / h
        sw = w.sum()
        mbar = (w * mu).sum() / sw
        ybar = (w * y).sum() / sw
        dm = mu - mbar
        smm = (w * dm * dm).sum()
        if not smm > 0:
            return alpha, beta, mu, l_new, KNOWN_SINGULAR, it
        b_new = (w * dm * (y - ybar)).sum() / smm
        a_new = ybar - b_new * mbar
        gi = pvar_np(gcode, gpar, mu)
        hi = pvar_np(hcode, hpar, a_new + b_new * mu)
        if not (np.all(gi > 0) and np.all(hi > 0)):
            return a_new, b_new, mu, l_new, KNOWN_BAD_VARIANCE, it + 1
        l_new = float(np.sum((x - mu) ** 2 / gi + (y - a_new - b_new * mu) ** 2 / hi
                             + np.log(gi) + np.log(hi)))
        trace[it] = l_new
        dab = max(abs(a_new - alpha) / scale, abs(b_new - beta))
        dl = abs(l_new - l_old) / max(abs(l_new), 1.0)
        alpha, beta = float(a_new), float(b_new)
        it_done = it + 1
        if dab < tol_ab and dl < tol_l:
            return alpha, beta, mu, l_new, KNOWN_CONVERGED, it_done
        l_old = l_new
    return alpha, beta, mu, l_new, KNOWN_MAXITER, it_done


def known_fit(x, y, gcode, gpar, hcode, hpar, alpha, beta, mu0, scale,
              tol_ab=1e-12, tol_l=1e-12, maxit=20000):
    """Alternating weighted Deming fit with supplied profile codes.

    Returns ``(alpha, beta, mu, minus2logL, status, iterations, trace)`` where
    ``trace[k]`` is -2 log L after iteration ``k``.
    """
    trace = np.full(maxit, np.nan)
    fn = _known_fit_nb if _backend == "numba" else _known_fit_np
    a, b, mu, l, status, it = fn(x, y, gcode, gpar, hcode, hpar, float(alpha), float(beta),
                                 mu0, float(scale), tol_ab, tol_l, int(maxit), trace)
    return float(a), float(b), mu, float(l), int(status), int(it), trace[:it].copy()


# --------------------------------------------------------------------------
# Rocke-Lorenzato likelihood with profiled-out latent means
# --------------------------------------------------------------------------


def _rl_summand_py(mu, x, y, s2, k2, a, b, lam):
    g = s2 + k2 * mu * mu
    m = a + b * mu
    h = s2 + k2 * m * m
    dx = x - mu
    dy = y - m
    return dx * dx / (lam * g) + dy * dy / h + math.log(g * h)


_rl_summand_nb = _njit(_rl_summand_py)


def _rl_derivs_py(mu, x, y, s2, k2, a, b, lam):
    """First and second derivative of one likelihood summand in mu."""
    # lam cancels from the log term, so both variance pieces share one form:
    # q/W + log W with W' and W'' below.
    ig = 1.0 / (lam * (s2 + k2 * mu * mu))
    gp = 2.0 * lam * k2 * mu
    gpp = 2.0 * lam * k2
    m = a + b * mu
    ih = 1.0 / (s2 + k2 * m * m)
    hp = 2.0 * k2 * b * m
    hpp = 2.0 * k2 * b * b
    dx = x - mu
    u = dx * dx
    up = -2.0 * dx
    dy = y - m
    v = dy * dy
    vp = -2.0 * b * dy
    vpp = 2.0 * b * b
    gq = gp * ig
    hq = hp * ih
    f1 = (up - u * gq) * ig + (vp - v * hq) * ih + gq + hq
    f2 = ((2.0 - 2.0 * up * gq - u * gpp * ig + 2.0 * u * gq * gq) * ig
          + (vpp - 2.0 * vp * hq - v * hpp * ih + 2.0 * v * hq * hq) * ih
          + gpp * ig - gq * gq + hpp * ih - hq * hq)
    return f1, f2


_rl_derivs_nb = _njit(_rl_derivs_py)


@_njit
def _rl_mu_one(x, y, s2, k2, a, b, lam, scale):
    # warm start: closed-form latent mean with variances frozen at x
    g0 = lam * (s2 + k2 * x * x)
    m0 = a + b * x
    h0 = s2 + k2 * m0 * m0
    mu = (h0 * x + g0 * b * (y - a)) / (h0 + g0 * b * b)
    f = 0.0
    have_f = False
    for _ in range(30):
        f1, f2 = _rl_derivs_nb(mu, x, y, s2, k2, a, b, lam)
        tol = 1e-12 * (abs(mu) + scale)
        if f2 > 0.0:
            step = -f1 / f2
            if abs(step) <= tol:
                mu += step
                break
            if abs(step) < 1e-4 * (abs(mu) + scale):
                # quadratic regime: the Newton step is safe without a line search
                mu += step
                have_f = False
                continue
        else:
            step = -0.1 * (abs(mu) + math.sqrt(s2 + k2 * mu * mu)) * (1.0 if f1 > 0 else -1.0)
        if not have_f:
            f = _rl_summand_nb(mu, x, y, s2, k2, a, b, lam)
            have_f = True
        t = 1.0
        ok = False
        for _k in range(40):
            mn = mu + t * step
            fn = _rl_summand_nb(mn, x, y, s2, k2, a, b, lam)
            if fn <= f:
                ok = True
                break
            t *= 0.5
        if not ok:
            break
        moved = abs(t * step)
        mu = mn
        f = fn
        if moved <= tol:
            break
    return mu, _rl_summand_nb(mu, x, y, s2, k2, a, b, lam)


def _rl_unpack(z, scale, lsmin, lkmin):
    ls = z[0]
    lk = z[1]
    pen = 0.0
    if ls < lsmin:
        pen += (lsmin - ls) ** 2
        ls = lsmin
    if lk < lkmin:
        pen += (lk - lkmin) ** 2
        lk = lkmin
    s = math.exp(ls)
    k = math.exp(lk)
    return s * s, k * k, z[2] * scale, z[3], pen


_rl_unpack_nb = _njit(_rl_unpack)


@_njit
def _rl_objective_nb(z, x, y, lam, scale, lsmin, lkmin):
    s2, k2, a, b, pen = _rl_unpack_nb(z, scale, lsmin, lkmin)
    total = pen
    for i in range(x.shape[0]):
        _, f = _rl_mu_one(x[i], y[i], s2, k2, a, b, lam, scale)
        total += f
    return total


@_njit
def _rl_latent_nb(z, x, y, lam, scale, lsmin, lkmin):
    s2, k2, a, b, pen = _rl_unpack_nb(z, scale, lsmin, lkmin)
    mu = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        mu[i], _ = _rl_mu_one(x[i], y[i], s2, k2, a, b, lam, scale)
    return mu


def _rl_summand_np(mu, x, y, s2, k2, a, b, lam):
    g = s2 + k2 * mu * mu
    m = a + b * mu
    h = s2 + k2 * m * m
    return (x - mu) ** 2 / (lam * g) + (y - m) ** 2 / h + np.log(g * h)


def _rl_mu_np(x, y, s2, k2, a, b, lam, scale):
    g0 = lam * (s2 + k2 * x * x)
    m0 = a + b * x
    h0 = s2 + k2 * m0 * m0
    mu = (h0 * x + g0 * b * (y - a)) / (h0 + g0 * b * b)
    f = _rl_summand_np(mu, x, y, s2, k2, a, b, lam)
    active = np.ones(x.shape, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(30):
            f1, f2 = _rl_derivs_py(mu, x, y, s2, k2, a, b, lam)
            fallback = -0.1 * (np.abs(mu) + np.sqrt(s2 + k2 * mu * mu)) * np.where(f1 > 0, 1.0, -1.0)
            step = np.where(f2 > 0, -f1 / np.where(f2 > 0, f2, 1.0), fallback)
            step = np.where(active, step, 0.0)
            t = np.ones_like(mu)
            ok = np.zeros(mu.shape, dtype=bool)
            mn = mu.copy()
            fn = f.copy()
            for _k in range(40):
                trial = mu + t * step
                ft = _rl_summand_np(trial, x, y, s2, k2, a, b, lam)
                newly = (~ok) & (ft <= f)
                mn = np.where(newly, trial, mn)
                fn = np.where(newly, ft, fn)
                ok |= newly
                if np.all(ok | ~active):
                    break
                t = np.where(ok, t, 0.5 * t)
            moved = np.abs(t * step)
            upd = active & ok
            mu = np.where(upd, mn, mu)
            f = np.where(upd, fn, f)
            active = upd & (moved > 1e-12 * (np.abs(mu) + scale))
            if not active.any():
                break
    return mu, f


def _rl_objective_np(z, x, y, lam, scale, lsmin, lkmin):
    s2, k2, a, b, pen = _rl_unpack(z, scale, lsmin, lkmin)
    _, f = _rl_mu_np(x, y, s2, k2, a, b, lam, scale)
    return pen + float(f.sum())


def _rl_latent_np(z, x, y, lam, scale, lsmin, lkmin):
    s2, k2, a, b, _ = _rl_unpack(z, scale, lsmin, lkmin)
    return _rl_mu_np(x, y, s2, k2, a, b, lam, scale)[0]


# --------------------------------------------------------------------------
# Nelder-Mead
# --------------------------------------------------------------------------


def _rl_nelder_mead_py(z0, steps, x, y, lam, scale, lsmin, lkmin, xtol, maxfev):
    """Standard Nelder-Mead (reflect 1, expand 2, contract 1/2, shrink 1/2).

    Stops when every vertex lies within ``xtol`` (max-norm) of the best one or
    after ``maxfev`` evaluations.  Returns ``(z, f, nfev, converged)``.
    """
    d = z0.shape[0]
    sim = np.empty((d + 1, d))
    fs = np.empty(d + 1)
    for j in range(d + 1):
        for k in range(d):
            sim[j, k] = z0[k]
        if j > 0:
            sim[j, j - 1] += steps[j - 1]
        fs[j] = _rl_objective_nb(sim[j], x, y, lam, scale, lsmin, lkmin)
    nfev = d + 1
    converged = False
    cen = np.empty(d)
    xr = np.empty(d)
    xe = np.empty(d)
    xc = np.empty(d)
    while True:
        order = np.argsort(fs)
        sim = sim[order]
        fs = fs[order]
        diam = 0.0
        for j in range(1, d + 1):
            for k in range(d):
                dd = abs(sim[j, k] - sim[0, k])
                if dd > diam:
                    diam = dd
        if diam <= xtol:
            converged = True
            break
        if nfev >= maxfev:
            break
        for k in range(d):
            s = 0.0
            for j in range(d):
                s += sim[j, k]
            cen[k] = s / d
        for k in range(d):
            xr[k] = 2.0 * cen[k] - sim[d, k]
        fr = _rl_objective_nb(xr, x, y, lam, scale, lsmin, lkmin)
        nfev += 1
        if fr < fs[0]:
            for k in range(d):
                xe[k] = 3.0 * cen[k] - 2.0 * sim[d, k]
            fe = _rl_objective_nb(xe, x, y, lam, scale, lsmin, lkmin)
            nfev += 1
            if fe < fr:
                sim[d] = xe
                fs[d] = fe
            else:
                sim[d] = xr
                fs[d] = fr
        elif fr < fs[d - 1]:
            sim[d] = xr
            fs[d] = fr
        else:
            if fr < fs[d]:
                for k in range(d):
                    xc[k] = cen[k] + 0.5 * (xr[k] - cen[k])
            else:
                for k in range(d):
                    xc[k] = cen[k] + 0.5 * (sim[d, k] - cen[k])
            fc = _rl_objective_nb(xc, x, y, lam, scale, lsmin, lkmin)
            nfev += 1
            if fc < min(fr, fs[d]):
                sim[d] = xc
                fs[d] = fc
            else:
                for j in range(1, d + 1):
                    for k in range(d):
                        sim[j, k] = sim[0, k] + 0.5 * (sim[j, k] - sim[0, k])
                    fs[j] = _rl_objective_nb(sim[j], x, y, lam, scale, lsmin, lkmin)
                nfev += d
    return sim[0].copy(), fs[0], nfev, converged


_rl_nelder_mead_nb = _njit(_rl_nelder_mead_py)
# identical code with the vectorized objective bound in place of the loop one
_rl_nelder_mead_np = types.FunctionType(
    _rl_nelder_mead_py.__code__,
    dict(globals(), _rl_objective_nb=_rl_objective_np),
    "_rl_nelder_mead_np",
)


def rl_minimize(z0, steps, x, y, lam, scale, lsmin, lkmin, xtol=1e-9, maxfev=2000):
    """Nelder-Mead over (log sigma, log kappa, alpha/scale, beta)."""
    z0 = np.asarray(z0, dtype=float)
    steps = np.asarray(steps, dtype=float)
    if _backend == "numba":
        z, f, nfev, conv = _rl_nelder_mead_nb(z0, steps, x, y, float(lam),
                                           float(scale), float(lsmin), float(lkmin),
                                           float(xtol), int(maxfev))
    else:
        z, f, nfev, conv = _rl_nelder_mead_np(z0, steps, x, y, float(lam),
                                           float(scale), float(lsmin), float(lkmin),
                                           float(xtol), int(maxfev))
    return z, float(f), int(nfev), bool(conv)


def rl_objective(z, x, y, lam, scale, lsmin, lkmin):
    """Likelihood minimized over the latent means, plus the floor penalty."""
    z = np.asarray(z, dtype=float)
    fn = _rl_objective_nb if _backend == "numba" else _rl_objective_np
    return float(fn(z, x, y, float(lam), float(scale), float(lsmin), float(lkmin)))


def rl_latent(z, x, y, lam, scale, lsmin, lkmin):
    z = np.asarray(z, dtype=float)
    fn = _rl_latent_nb if _backend == "numba" else _rl_latent_np
    return fn(z, x, y, float(lam), float(scale), float(lsmin), float(lkmin))


# --------------------------------------------------------------------------
# pairwise slopes (Passing-Bablok)
# --------------------------------------------------------------------------


@_njit
def _pairwise_slopes_nb(x, y):
    n = x.shape[0]
    out = np.empty(n * (n - 1) // 2)
    m = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = x[j] - x[i]
            dy = y[j] - y[i]
            if dx == 0.0:
                if dy == 0.0:
                    continue
                out[m] = np.inf if dy > 0 else -np.inf
            else:
                s = dy / dx
                if s == -1.0:
                    continue
                out[m] = s
            m += 1
    return out[:m]


def _pairwise_slopes_np(x, y):
    i, j = np.triu_indices(x.shape[0], k=1)
    dx = x[j] - x[i]
    dy = y[j] - y[i]
    keep = ~((dx == 0) & (dy == 0))
    dx = dx[keep]
    dy = dy[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(dx == 0, np.where(dy > 0, np.inf, -np.inf), dy / np.where(dx == 0, 1.0, dx))
    return s[s != -1.0]


def pairwise_slopes(x, y):
    """Pairwise slopes over i < j, dropping 0/0 pairs and slopes equal to -1."""
    fn = _pairwise_slopes_nb if _backend == "numba" else _pairwise_slopes_np
    return fn(np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(y, dtype=float))
