"""Residual diagnostics: scaled residuals, residual variance profile, QQ normality."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, stats

from .data import MCDataset
from .errors import ConvergenceError, DataError, DegenerateFitError


@dataclass(frozen=True)
class ResidualSet:
    e: np.ndarray
    r: np.ndarray
    variance: np.ndarray
    sd_r: float
    sd_r_ci: tuple[float, float]
    level: float = 0.95


@dataclass(frozen=True)
class ResidualProfileFit:
    sigma_r: float
    kappa_r: float
    minus2logL: float
    minus2logL_const_sd: float
    minus2logL_const_cv: float
    p_const_sd: float
    p_const_cv: float
    clamped: bool = False


def residual_variance(data: MCDataset, fit) -> np.ndarray:
    """Model variance of each raw residual for a known-profile or RL fit."""
    if getattr(fit, "method", None) == "rl":
        return fit.residual_variance(data.x)
    g, h = fit.variances()
    return h + g * fit.beta ** 2


def sd_with_ci(r, level: float = 0.95) -> tuple[float, tuple[float, float]]:
    """Residual SD on n-2 degrees of freedom with its chi-squared interval."""
    r = np.asarray(r, dtype=float)
    df = r.size - 2
    if df < 1:
        raise DataError("need at least 3 residuals")
    sd = math.sqrt(float(r @ r) / df)
    lo_q, hi_q = stats.chi2.ppf([(1 + level) / 2, (1 - level) / 2], df)
    return sd, (sd * math.sqrt(df / lo_q), sd * math.sqrt(df / hi_q))


def residuals(data: MCDataset, fit, level: float = 0.95) -> ResidualSet:
    """Raw residuals ``y - a - b*x`` and their model-scaled versions.

    Known-profile fits scale by ``h_i + g_i*b^2`` at the fitted latent means;
    RL fits use the plug-in variance at the observed X, which inherits the
    bias of the fitted sigma and kappa.
    """
    if not getattr(fit, "converged", True):
        raise DegenerateFitError("residuals need a converged fit")
    e = data.y - fit.alpha - fit.beta * data.x
    var = residual_variance(data, fit)
    if np.any(var <= 0):
        bad = int(data.index[np.argmax(var <= 0)])
        raise DegenerateFitError(f"zero residual variance at sample {bad}")
    r = e / np.sqrt(var)
    sd, ci = sd_with_ci(r, level)
    return ResidualSet(e, r, var, sd, ci, level)


def _lr(x2, r2, a, b):
    v = a + b * x2
    return float(np.sum(r2 / v + np.log(v)))


def fit_residual_profile(x, r) -> ResidualProfileFit:
    """Fit ``Var(r) = sigma_r^2 + (kappa_r*x)^2`` by maximum likelihood.

    The two restricted models (kappa_r = 0 with the pooled SD, sigma_r = 0 with
    the pooled CV) are compared with the unrestricted minimum on one degree of
    freedom each.  A likelihood-ratio statistic that comes out negative (the
    optimizer stopping short of a restricted point) is clamped to zero and
    flagged in ``clamped``.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    if x.shape != r.shape:
        raise DataError("x and r lengths differ")
    if x.size < 4:
        raise DataError(f"residual profile needs n >= 4, got {x.size}")
    if np.any(x <= 0):
        raise DataError("residual profile needs all x > 0")
    r2 = r * r
    x2 = x * x
    if not np.any(r2 > 0):
        raise DegenerateFitError("all residuals are zero")

    sd2 = float(np.mean(r2))
    cv2 = float(np.mean(r2 / x2))
    l_sd = _lr(x2, r2, sd2, 0.0)
    l_cv = _lr(x2, r2, 0.0, cv2)

    # variance components on their natural scale so the restricted points lie
    # inside the feasible box; rescaled for conditioning
    sa, sb = sd2, cv2
    if not (sa > 0 and sb > 0):
        sa = sb = max(sa, sb, 1e-300)

    def fun(p):
        v = p[0] * sa + p[1] * sb * x2
        if not np.all(v > 0):
            return math.inf, np.zeros(2)
        q = r2 / v
        f = float(np.sum(q + np.log(v)))
        dv = (1.0 - q) / v
        return f, np.array([np.sum(dv) * sa, np.sum(dv * x2) * sb])

    starts = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.5, 0.5])]
    best = None
    for p0 in starts:
        if _lr(x2, r2, p0[0] * sa, p0[1] * sb) == math.inf:
            continue
        res = optimize.minimize(fun, p0, jac=True, method="L-BFGS-B",
                                bounds=[(0.0, None), (0.0, None)],
                                options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 1000})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise ConvergenceError("residual profile fit failed")
    l_min = float(best.fun)
    clamped = False
    stat_sd = l_sd - l_min
    stat_cv = l_cv - l_min
    if stat_sd < 0 or stat_cv < 0:
        clamped = True
        if min(stat_sd, stat_cv) < -1e-6 * max(1.0, abs(l_min)):
            warnings.warn("restricted residual model beat the unrestricted fit; "
                          "likelihood-ratio statistic clamped to 0", RuntimeWarning)
        stat_sd, stat_cv = max(stat_sd, 0.0), max(stat_cv, 0.0)
        l_min = min(l_min, l_sd, l_cv)
    a, b = best.x[0] * sa, best.x[1] * sb
    return ResidualProfileFit(
        sigma_r=math.sqrt(max(a, 0.0)), kappa_r=math.sqrt(max(b, 0.0)),
        minus2logL=l_min, minus2logL_const_sd=l_sd, minus2logL_const_cv=l_cv,
        p_const_sd=float(stats.chi2.sf(stat_sd, 1)),
        p_const_cv=float(stats.chi2.sf(stat_cv, 1)),
        clamped=clamped,
    )


def blom_quantiles(n: int) -> np.ndarray:
    i = np.arange(1, n + 1)
    return stats.norm.ppf((i - 0.375) / (n + 0.25))


def qq_points(r) -> tuple[np.ndarray, np.ndarray]:
    """(theoretical Blom quantile, ordered residual) pairs for a QQ plot."""
    r = np.sort(np.asarray(r, dtype=float))
    return blom_quantiles(r.size), r


def qq_correlation(r) -> float:
    q, s = qq_points(r)
    if np.ptp(s) == 0:
        raise DegenerateFitError("constant residuals: QQ correlation undefined")
    return float(np.corrcoef(q, s)[0, 1])


@lru_cache(maxsize=32)
def _qq_reference(n: int, n_ref: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = np.sort(rng.standard_normal((n_ref, n)), axis=1)
    q = blom_quantiles(n)
    qc = q - q.mean()
    zc = z - z.mean(axis=1, keepdims=True)
    corr = (zc @ qc) / (np.sqrt((zc * zc).sum(axis=1)) * math.sqrt(float(qc @ qc)))
    corr.setflags(write=False)
    return corr


def qq_normality(r, *, n_ref: int = 10_000, seed: int = 20240601) -> float:
    """Monte-Carlo P value of the QQ correlation test for normality.

    The reference distribution is the correlation of ``n_ref`` sorted
    standard-normal samples of the same size with the Blom quantiles; the P
    value is the (add-one) fraction of reference correlations at or below the
    observed one.
    """
    r = np.asarray(r, dtype=float)
    if r.size < 10:
        raise DataError(f"QQ normality test needs n >= 10, got {r.size}")
    obs = qq_correlation(r)
    ref = _qq_reference(r.size, int(n_ref), int(seed))
    count = int(np.count_nonzero(ref <= obs + 1e-15))
    return (1 + count) / (1 + ref.size)
