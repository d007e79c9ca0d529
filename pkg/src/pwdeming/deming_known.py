"""Weighted Deming regression with externally supplied precision profiles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import MCDataset, data_scale
from .errors import ConvergenceError, DataError, DegenerateFitError
from .profiles import PrecisionProfile, evaluate

MAX_ITER = 20000
TOL_AB = 1e-12
TOL_L = 1e-12


@dataclass(frozen=True)
class DemingFit:
    """Known-profile fit: line, latent means and minimized -2 log L."""

    alpha: float
    beta: float
    mu_hat: np.ndarray
    minus2logL: float
    profile_x: PrecisionProfile
    profile_y: PrecisionProfile
    converged: bool
    iterations: int
    trace: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    method = "known"

    def variances(self) -> tuple[np.ndarray, np.ndarray]:
        """(g_i, h_i) at the fitted latent means."""
        g = evaluate(self.profile_x, self.mu_hat)
        h = evaluate(self.profile_y, self.alpha + self.beta * self.mu_hat)
        return g, h

    def latent_means(self, x, y, iterations: int = 50) -> np.ndarray:
        """Latent means of arbitrary (x, y) pairs, variances re-evaluated to a fixed point."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        mu = x.copy()
        for _ in range(iterations):
            g = evaluate(self.profile_x, mu)
            h = evaluate(self.profile_y, self.alpha + self.beta * mu)
            new = latent_mu(x, y, self.alpha, self.beta, g, h)
            if np.allclose(new, mu, rtol=1e-13, atol=0):
                return np.asarray(new, dtype=float)
            mu = np.asarray(new, dtype=float)
        return mu


def latent_mu(x, y, alpha, beta, g, h):
    """Maximum-likelihood latent concentration with the variances held fixed."""
    x, y, g, h = (np.asarray(v, dtype=float) for v in (x, y, g, h))
    den = h + g * beta * beta
    if np.any(den == 0) or np.any(g <= 0) or np.any(h <= 0):
        raise DegenerateFitError("latent mean needs g > 0, h > 0 and h + g*beta^2 > 0")
    out = (h * x + g * beta * (y - alpha)) / den
    return float(out) if out.ndim == 0 else out


def minus2loglik(x, y, alpha, beta, mu, gx: PrecisionProfile, hy: PrecisionProfile) -> float:
    """-2 log L with the variances evaluated at the supplied latent means."""
    x, y, mu = (np.asarray(v, dtype=float) for v in (x, y, mu))
    g = evaluate(gx, mu)
    h = evaluate(hy, alpha + beta * mu)
    return float(np.sum((x - mu) ** 2 / g + (y - alpha - beta * mu) ** 2 / h
                        + np.log(g) + np.log(h)))


def ols(x, y) -> tuple[float, float]:
    """Ordinary least squares (intercept, slope) of y on x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 0:
        raise DataError("all x values are equal; the regression is rank-deficient")
    b = float(xc @ (y - y.mean())) / sxx
    return float(y.mean() - b * x.mean()), b


def fit_known(data: MCDataset, gx: PrecisionProfile, hy: PrecisionProfile, *,
              start=None, maxit: int = MAX_ITER, tol_ab: float = TOL_AB,
              tol_l: float = TOL_L) -> DemingFit:
    """Maximum-likelihood weighted Deming fit for known profiles.

    Alternates three steps until the line and -2 log L settle:
    evaluate ``g`` at the current latent means and ``h`` at the current fitted
    means; update every latent mean in closed form; refit the line by weighted
    least squares of Y on the latent means with weights ``1/h``.

    Parameters
    ----------
    data : MCDataset
    gx, hy : PrecisionProfile
        Variance profiles of the predicate (X) and test (Y) methods.
    start : fit-like, optional
        Object with ``alpha`` and ``beta`` used instead of the OLS start.

    Raises
    ------
    DataError
        All x equal.
    DegenerateFitError
        A variance became non-positive or the fitted slope is exactly zero.
    ConvergenceError
        ``maxit`` alternations without meeting the tolerances; ``last`` holds
        the final iterate.
    """
    x, y = data.x, data.y
    a0, b0 = ols(x, y)
    if start is not None:
        a0, b0 = float(start.alpha), float(start.beta)
    a, b, mu, l, status, it, trace = kernels.known_fit(
        x, y, gx.code, gx.as_array(), hy.code, hy.as_array(), a0, b0, x.copy(),
        data_scale(x), tol_ab, tol_l, maxit)
    if status == kernels.KNOWN_BAD_VARIANCE:
        raise DegenerateFitError("a profile variance is non-positive over the data range")
    if status == kernels.KNOWN_SINGULAR:
        raise DegenerateFitError("latent means collapsed to a single value")
    fit = DemingFit(a, b, mu, l, gx, hy, status == kernels.KNOWN_CONVERGED, it, trace)
    if not fit.converged:
        raise ConvergenceError(f"known-profile fit did not converge in {maxit} iterations",
                               last=fit, trace=trace)
    if b == 0.0:
        raise DegenerateFitError("fitted slope is exactly zero")
    return fit
