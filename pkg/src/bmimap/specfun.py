"""Standard normal pdf/cdf/quantile and Owen's T function.

All functions accept Python floats or numpy arrays (except :func:`owens_t`,
which is scalar) and work in float64.
"""

import math

import numpy as np
from scipy import special

from .errors import BoundaryError, DomainError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT_HALF = math.sqrt(0.5)
_TWO_PI = 2.0 * math.pi

# Acklam's rational approximation, relative error ~1.2e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def std_normal_pdf(x):
    """Standard normal density."""
    if np.ndim(x) == 0:
        x = float(x)
        if not math.isfinite(x):
            raise DomainError(f"std_normal_pdf requires a finite argument, got {x}")
        return _INV_SQRT_2PI * math.exp(-0.5 * x * x)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("std_normal_pdf requires finite arguments")
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def std_normal_cdf(x):
    """Standard normal cdf; +/-inf map to 1/0."""
    if np.ndim(x) == 0:
        x = float(x)
        if math.isnan(x):
            raise DomainError("std_normal_cdf of NaN")
        return 0.5 * math.erfc(-x * _SQRT_HALF)
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise DomainError("std_normal_cdf of NaN")
    return special.ndtr(x)


def _acklam_lower(q):
    """Initial quantile for 0 < q <= 0.5 (arrays)."""
    out = np.empty_like(q)
    tail = q < _P_LOW
    if np.any(tail):
        t = np.sqrt(-2.0 * np.log(q[tail]))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        den = (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0
        out[tail] = num / den
    mid = ~tail
    if np.any(mid):
        r = q[mid] - 0.5
        s = r * r
        num = (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r
        den = ((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0
        out[mid] = num / den
    return out


def _quantile_array(p):
    q = np.minimum(p, 1.0 - p)
    x = _acklam_lower(q)
    # Halley refinement on the lower half, where ndtr keeps full relative precision.
    for _ in range(2):
        e = special.ndtr(x) - q
        u = e * _SQRT_2PI * np.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return np.where(p > 0.5, -x, x)


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open interval (0, 1).

    Raises BoundaryError for p in {0, 1} and DomainError outside [0, 1].
    """
    scalar = np.ndim(p) == 0
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    if np.any(arr == 0.0) or np.any(arr == 1.0):
        raise BoundaryError("std_normal_quantile is unbounded at p = 0 or p = 1")
    x = _quantile_array(arr)
    return float(x[0]) if scalar else x


def _owens_t_small_a(h, a):
    # Gauss-Legendre on [0, a] of exp(-h^2 (1+x^2)/2) / (1+x^2); a <= 1.
    x = 0.5 * a * (_GL_NODES + 1.0)
    w = 0.5 * a * _GL_WEIGHTS
    f = np.exp(-0.5 * h * h * (1.0 + x * x)) / (1.0 + x * x)
    return float(np.dot(w, f)) / _TWO_PI


def owens_t(h, a):
    """Owen's T function T(h, a) = (1/2pi) int_0^a exp(-h^2(1+x^2)/2)/(1+x^2) dx.

    For |a| <= 1 the integral is evaluated by 48-point Gauss-Legendre; larger
    |a| is reduced through T(h,a) + T(ah,1/a) = Q(h)/2 + Q(ah)/2 - Q(h)Q(ah)
    (h >= 0, a > 0, Q the upper tail), which keeps the quadrature on a short
    interval and avoids cancellation for large h.
    """
    h = float(h)
    a = float(a)
    if not (math.isfinite(h) and math.isfinite(a)):
        raise DomainError(f"owens_t requires finite arguments, got ({h}, {a})")
    if a == 0.0:
        return 0.0
    if a < 0.0:
        return -owens_t(h, -a)
    h = abs(h)
    if h == 0.0:
        return math.atan(a) / _TWO_PI
    if a <= 1.0:
        return _owens_t_small_a(h, a)
    ah = a * h
    qh = 0.5 * math.erfc(h * _SQRT_HALF)
    qah = 0.5 * math.erfc(ah * _SQRT_HALF)
    return 0.5 * qh + 0.5 * qah - qh * qah - _owens_t_small_a(ah, 1.0 / a)
