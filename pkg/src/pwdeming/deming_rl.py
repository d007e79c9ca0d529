"""Weighted Deming fit under a shared, estimated Rocke-Lorenzato profile.

With no external precision information, both methods are assumed to follow
``sigma^2 + (kappa*mu)^2`` up to a known ratio ``lam`` applied to the X
variance.  The likelihood is minimized over (sigma, kappa, alpha, beta) by
Nelder-Mead, with every latent mean profiled out by a 1-D Newton solve at
each outer evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import MCDataset, data_scale
from .deming_known import ols
from .errors import ConvergenceError, DataError, DegenerateFitError

XTOL = 1e-9
MAXFEV = 2000
# log-parameter floors, relative to the data scale for sigma
FLOOR = 1e-10
BOUNDARY = 1e-8
# deterministic (log sigma, log kappa) offsets for the multi-start: a balanced
# start plus one deep in each of the constant-SD and constant-CV basins
JITTER = ((0.0, 0.0), (math.log(2.0), -math.log(500.0)), (-math.log(500.0), math.log(2.0)))
STEPS = np.array([0.5, 0.5, 0.05, 0.05])
POLISH_STEPS = np.array([0.05, 0.05, 0.005, 0.005])


@dataclass(frozen=True)
class RLFit:
    alpha: float
    beta: float
    sigma: float
    kappa: float
    lam: float
    mu_hat: np.ndarray
    minus2logL: float
    converged: bool
    boundary: str | None = None
    n_evals: int = 0

    method = "rl"

    def variances(self) -> tuple[np.ndarray, np.ndarray]:
        """(g_i, h_i) at the fitted latent means, g including ``lam``."""
        s2, k2 = self.sigma ** 2, self.kappa ** 2
        m = self.alpha + self.beta * self.mu_hat
        return self.lam * (s2 + k2 * self.mu_hat ** 2), s2 + k2 * m ** 2

    def latent_means(self, x, y) -> np.ndarray:
        """Profiled latent means of arbitrary (x, y) pairs under this fit."""
        x = np.ascontiguousarray(x, dtype=float)
        y = np.ascontiguousarray(y, dtype=float)
        z = np.array([math.log(self.sigma) if self.sigma > 0 else -700.0,
                      math.log(self.kappa) if self.kappa > 0 else -700.0,
                      self.alpha, self.beta])
        return kernels.rl_latent(z, x, y, self.lam, 1.0, -700.0, -700.0)

    def residual_variance(self, x) -> np.ndarray:
        """Plug-in residual variance evaluated at the observed X."""
        x = np.asarray(x, dtype=float)
        s2, k2 = self.sigma ** 2, self.kappa ** 2
        return (self.lam * self.beta ** 2 * (s2 + k2 * x ** 2)
                + s2 + k2 * (self.alpha + self.beta * x) ** 2)


def rl_minus2loglik(x, y, alpha, beta, sigma, kappa, mu, lam=1.0) -> float:
    """-2 log L of the shared-profile model; ``lam`` enters the X quadratic only."""
    x, y, mu = (np.asarray(v, dtype=float) for v in (x, y, mu))
    g = sigma ** 2 + (kappa * mu) ** 2
    m = alpha + beta * mu
    h = sigma ** 2 + (kappa * m) ** 2
    return float(np.sum((x - mu) ** 2 / (lam * g) + (y - m) ** 2 / h + np.log(g * h)))


def _starts(x, y, scale):
    a0, b0 = ols(x, y)
    rms = math.sqrt(float(np.mean((y - a0 - b0 * x) ** 2)))
    rms = max(rms, 1e-6 * scale)
    mean_x = max(abs(float(np.mean(x))), 1e-12 * scale)
    s0 = 0.5 * rms
    k0 = 0.5 * rms / mean_x
    base = np.array([math.log(s0), math.log(k0), a0 / scale, b0])
    return [base + np.array([ds, dk, 0.0, 0.0]) for ds, dk in JITTER]


def fit_rl(data: MCDataset, lam: float = 1.0, *, start=None, xtol: float = XTOL,
           maxfev: int = MAXFEV) -> RLFit:
    """Maximum-likelihood fit of the shared Rocke-Lorenzato model.

    Parameters
    ----------
    data : MCDataset
        At least five pairs.
    lam : float
        Known ratio of the X variance profile to the Y profile.
    start : fit-like, optional
        Object with ``sigma``, ``kappa``, ``alpha`` and ``beta``.  When given,
        a single warm-started search replaces the three-point multi-start.

    Returns
    -------
    RLFit
        ``boundary`` is ``"sigma"`` or ``"kappa"`` when that parameter sits at
        the zero boundary (constant-CV or constant-variance special case).
    """
    lam = float(lam)
    if not (math.isfinite(lam) and lam > 0):
        raise DataError(f"lambda must be positive and finite, got {lam}")
    if data.n < 5:
        raise DataError(f"the shared-profile fit needs n >= 5, got {data.n}")
    x, y = data.x, data.y
    scale = data_scale(x)
    lsmin = math.log(FLOOR * scale)
    lkmin = math.log(FLOOR)

    if start is not None:
        candidates = [np.array([
            math.log(max(start.sigma, FLOOR * scale)), math.log(max(start.kappa, FLOOR)),
            start.alpha / scale, start.beta])]
    else:
        candidates = _starts(x, y, scale)

    nfev = 0
    best_z, best_f = None, math.inf
    for z0 in candidates:
        # coarse pass per start; only the winner is polished to full tolerance
        z, f, k, _ = kernels.rl_minimize(z0, STEPS, x, y, lam, scale, lsmin, lkmin,
                                         xtol=1e-4, maxfev=maxfev)
        nfev += k
        if f < best_f:
            best_z, best_f = z, f

    converged = False
    for _ in range(4):
        z, f, k, converged = kernels.rl_minimize(best_z, POLISH_STEPS, x, y, lam, scale,
                                                 lsmin, lkmin, xtol=xtol, maxfev=maxfev)
        nfev += k
        improved = best_f - f > 1e-12 * max(1.0, abs(best_f))
        if f <= best_f:
            best_z, best_f = z, f
        if converged and not improved:
            break

    mu = kernels.rl_latent(best_z, x, y, lam, scale, lsmin, lkmin)
    sigma = math.exp(max(best_z[0], lsmin))
    kappa = math.exp(max(best_z[1], lkmin))
    alpha = float(best_z[2] * scale)
    beta = float(best_z[3])
    boundary = None
    if sigma < BOUNDARY * scale:
        boundary = "sigma"
    elif kappa < BOUNDARY:
        boundary = "kappa"
    fit = RLFit(alpha, beta, sigma, kappa, lam, mu,
                rl_minus2loglik(x, y, alpha, beta, sigma, kappa, mu, lam),
                converged, boundary, nfev)
    if not converged:
        raise ConvergenceError("shared-profile fit did not converge", last=fit)
    if beta == 0.0:
        raise DegenerateFitError("fitted slope is exactly zero")
    return fit
