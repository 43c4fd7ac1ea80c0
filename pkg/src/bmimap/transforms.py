"""Individual-level conversions between BMI, zBMI and percentile.

Percentiles are on [0, 1] throughout.  Functions accept floats or numpy
arrays of matching shape.
"""

import math

import numpy as np
from scipy import special

from .errors import DomainError, ValidationError
from .specfun import std_normal_cdf, std_normal_quantile

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def z_from_bmi(bmi, lam, mu, sigma):
    """LMS z-score: ((B/mu)^lambda - 1)/(lambda*sigma), or log(B/mu)/sigma when lambda == 0."""
    b = np.asarray(bmi, dtype=float)
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(b > 0)):
        raise DomainError("BMI must be > 0")
    if np.any(~(mu > 0)) or np.any(~(sigma > 0)):
        raise DomainError("mu and sigma must be > 0")
    ratio = b / mu
    zero = lam == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        safe_lam = np.where(zero, 1.0, lam)
        z = np.where(zero, np.log(ratio) / sigma, np.expm1(safe_lam * np.log(ratio)) / (safe_lam * sigma))
    return _scalar_or_array(z)


def bmi_from_z(z, lam, mu, sigma):
    """Inverse LMS transform mu*(1 + lambda*sigma*Z)^(1/lambda).

    Raises ValidationError when the base 1 + lambda*sigma*Z is not positive;
    callers mapping sampled z-scores should truncate first (see
    :func:`bmimap.optimizer.truncate_z`).
    """
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    zero = lam == 0
    base = 1.0 + lam * sigma * z
    if np.any(~zero & ~(base > 0)):
        raise ValidationError("1 + lambda*sigma*Z <= 0: z-score beyond the LMS validity bound")
    with np.errstate(divide="ignore", invalid="ignore"):
        safe_lam = np.where(zero, 1.0, lam)
        safe_base = np.where(zero, 1.0, base)
        b = np.where(zero, mu * np.exp(sigma * z), mu * np.exp(np.log(safe_base) / safe_lam))
    return _scalar_or_array(b)


def percentile_from_z(z):
    return std_normal_cdf(z)


def z_from_percentile(p):
    return std_normal_quantile(p)


def induced_z_density(z, alpha, beta):
    """Density of Z = Phi^-1(P) for P ~ Beta(alpha, beta): f_P(Phi(z)) * phi(z)."""
    if not (alpha > 0 and beta > 0):
        raise DomainError(f"beta shape parameters must be > 0, got ({alpha}, {beta})")
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("induced_z_density requires finite z")
    # Log space with log_ndtr on both tails: Phi(z) rounds to 1 beyond z ~ 8.3.
    logp = ((alpha - 1.0) * special.log_ndtr(z) + (beta - 1.0) * special.log_ndtr(-z)
            - special.betaln(alpha, beta) - 0.5 * z * z - _LOG_SQRT_2PI)
    return _scalar_or_array(np.exp(logp))
