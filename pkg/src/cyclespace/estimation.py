"""Weighted least-squares state estimation and chi-square bad-data detection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dcsim import JacobianH, NoiseModel

__all__ = [
    "EstimationError",
    "WlsEstimate",
    "ResidualStats",
    "WlsEstimator",
    "wls_estimate",
    "sensitivity_matrix",
    "lnr",
    "chi2_cdf",
    "chi2_threshold",
    "regularized_gamma_p",
    "bdd_detect",
    "residual_rows_csv",
]


class EstimationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class WlsEstimate:
    x_hat: np.ndarray
    z_hat: np.ndarray


@dataclass(frozen=True)
class ResidualStats:
    lnr: float | np.ndarray
    dof: int
    threshold: float
    flagged: bool | np.ndarray


class WlsEstimator:
    """WLS estimator with the gain matrix and sensitivity matrix precomputed."""

    def __init__(self, h: JacobianH | np.ndarray, noise: NoiseModel):
        H = h.matrix if isinstance(h, JacobianH) else np.asarray(h, dtype=float)
        if noise.m != H.shape[0]:
            raise ValueError("noise model and Jacobian disagree on m")
        self.H = H
        self.sigma = noise.sigma
        w = 1.0 / self.sigma**2
        G = H.T @ (w[:, None] * H)
        if np.linalg.matrix_rank(G) < H.shape[1]:
            raise EstimationError("H^T R^-1 H is singular (H is not full column rank)")
        self.G_inv = np.linalg.inv(G)
        # x_hat = K z
        self.K = self.G_inv @ (H.T * w[None, :])
        self.S = np.eye(H.shape[0]) - H @ self.K
        self.dof = H.shape[0] - H.shape[1]

    def estimate(self, z) -> WlsEstimate:
        x_hat = self.K @ z
        return WlsEstimate(x_hat, self.H @ x_hat)

    def residual(self, z) -> np.ndarray:
        return self.S @ z

    def lnr(self, z) -> np.ndarray | float:
        r = self.S @ z
        s = r / (self.sigma if r.ndim == 1 else self.sigma[:, None])
        return np.sum(s * s, axis=0)

    def detect(self, z, alpha: float = 0.05) -> ResidualStats:
        tau = chi2_threshold(self.dof, alpha)
        val = self.lnr(z)
        return ResidualStats(val, self.dof, tau, val >= tau)


def wls_estimate(h, noise: NoiseModel, z) -> WlsEstimate:
    return WlsEstimator(h, noise).estimate(z)


def sensitivity_matrix(h, noise: NoiseModel) -> np.ndarray:
    return WlsEstimator(h, noise).S


def lnr(h, noise: NoiseModel, z):
    return WlsEstimator(h, noise).lnr(z)


def bdd_detect(h, noise: NoiseModel, z, alpha: float = 0.05) -> ResidualStats:
    """Chi-square test on the weighted residual; vectorised over columns of ``z``."""
    return WlsEstimator(h, noise).detect(z, alpha)


def residual_rows_csv(stats: ResidualStats, header: str = "") -> str:
    """Per-timestep rows ``t,lnr,threshold,flagged``."""
    lnr_vals = np.atleast_1d(stats.lnr)
    flags = np.atleast_1d(stats.flagged)
    lines = [f"# {header}"] if header else []
    lines.append("t,lnr,threshold,flagged")
    for t, (v, f) in enumerate(zip(lnr_vals, flags)):
        lines.append(f"{t},{float(v)!r},{stats.threshold!r},{int(f)}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------- chi-square

_EPS = 1e-16
_TINY = 1e-300


def _gamma_series(a, x):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a, x):
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma function P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_cont_frac(a, x))


def chi2_cdf(x: float, dof: int) -> float:
    return regularized_gamma_p(dof / 2.0, x / 2.0)


def chi2_threshold(dof: int, alpha: float, tol: float = 1e-10) -> float:
    """Inverse chi-square CDF at ``1 - alpha`` by bisection."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    target = 1.0 - alpha
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < target:
        lo, hi = hi, 2.0 * hi
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        err = chi2_cdf(mid, dof) - target
        if abs(err) <= tol * 0.1 or hi - lo <= 1e-15 * max(1.0, hi):
            return mid
        if err < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
