"""Closed-form percentile moments of a normal z-score and their numerical inverse.

If Z ~ N(m, s^2) and P = Phi(Z), then with u = m / sqrt(1 + s^2)

    E[P]   = Phi(u)
    Var[P] = Phi(u) - 2 T(u, 1/sqrt(1 + 2 s^2)) - Phi(u)^2

where T is Owen's T function.  Mapping aggregate percentile data to the
z scale means solving these two equations for (m, s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleInputError, NonConvergenceError
from .specfun import owens_t, std_normal_cdf, std_normal_quantile

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100
BOUNDARY_EPS = 1e-6


@dataclass(frozen=True)
class ZDistribution:
    m_z: float
    s_z: float

    def __post_init__(self):
        if not self.s_z > 0:
            raise ValueError(f"s_z must be > 0, got {self.s_z}")


@dataclass(frozen=True)
class PercentileMoments:
    """Mean and SD of a percentile variable on the [0, 1] scale."""

    mean: float
    sd: float

    def check_feasible(self):
        if not (0.0 < self.mean < 1.0) or not self.sd >= 0:
            raise InfeasibleInputError(f"percentile moments out of range: mean={self.mean}, sd={self.sd}")
        if self.sd ** 2 >= self.mean * (1.0 - self.mean):
            raise InfeasibleInputError(
                f"sd^2 = {self.sd ** 2:.6g} >= mean*(1-mean) = {self.mean * (1 - self.mean):.6g}; "
                "no [0,1] variable has these moments")


@dataclass
class SolveDiagnostics:
    iterations: int
    residual_mean: float
    residual_sd: float
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _u(m_z, s_z):
    return m_z / math.sqrt(1.0 + s_z * s_z)


def expected_percentile(d: ZDistribution) -> float:
    return std_normal_cdf(_u(d.m_z, d.s_z))


def variance_percentile(d: ZDistribution) -> float:
    u = _u(d.m_z, d.s_z)
    v = 1.0 / math.sqrt(1.0 + 2.0 * d.s_z * d.s_z)
    phi_u = std_normal_cdf(u)
    return phi_u - 2.0 * owens_t(u, v) - phi_u * phi_u


def percentile_moments(d: ZDistribution) -> PercentileMoments:
    """Forward map (m_z, s_z) -> (mean, SD) of the percentile."""
    return PercentileMoments(expected_percentile(d), math.sqrt(max(variance_percentile(d), 0.0)))


def _residual(x, obs):
    d = ZDistribution(x[0], math.exp(x[1]))
    return np.array([expected_percentile(d) - obs.mean,
                     math.sqrt(max(variance_percentile(d), 0.0)) - obs.sd])


def _jacobian(x, obs, h=1e-6):
    jac = np.empty((2, 2))
    for k in range(2):
        step = np.zeros(2)
        step[k] = h
        jac[:, k] = (_residual(x + step, obs) - _residual(x - step, obs)) / (2 * h)
    return jac


def map_percentile_to_z_analytical(obs: PercentileMoments, tol: float = DEFAULT_TOL,
                                   max_iter: int = DEFAULT_MAX_ITER):
    """Solve E[P] = obs.mean, SD[P] = obs.sd for (m_z, s_z).

    Damped Newton in (m_z, log s_z) with a central-difference Jacobian,
    started from m_z = sqrt(2) * Phi^-1(mean), s_z = 1.

    Returns ``(ZDistribution, SolveDiagnostics)``.  Raises
    InfeasibleInputError for unattainable moments or means within 1e-6 of
    0 or 1, and NonConvergenceError (carrying the best iterate) when the
    residuals stay above ``tol`` after ``max_iter`` iterations.
    """
    obs.check_feasible()
    if obs.mean < BOUNDARY_EPS or obs.mean > 1.0 - BOUNDARY_EPS:
        raise InfeasibleInputError(f"percentile mean {obs.mean} too close to 0 or 1")
    if obs.sd <= 0:
        raise InfeasibleInputError("percentile SD must be > 0")

    x = np.array([math.sqrt(2.0) * std_normal_quantile(obs.mean), 0.0])
    r = _residual(x, obs)
    norm = float(np.max(np.abs(r)))
    history = [(x.copy(), norm)]
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        try:
            delta = np.linalg.solve(_jacobian(x, obs), -r)
        except np.linalg.LinAlgError:
            break
        # Cap the log-s move so one step cannot jump s by more than e^2.
        if abs(delta[1]) > 2.0:
            delta *= 2.0 / abs(delta[1])
        lam = 1.0
        while lam > 1e-6:
            cand = x + lam * delta
            r_new = _residual(cand, obs)
            n_new = float(np.max(np.abs(r_new)))
            if math.isfinite(n_new) and n_new < norm:
                break
            lam *= 0.5
        else:
            break
        x, r, norm = cand, r_new, n_new
        history.append((x.copy(), norm))

    best = ZDistribution(float(x[0]), float(math.exp(x[1])))
    diag = SolveDiagnostics(it, float(r[0]), float(r[1]), norm <= tol, history)
    if norm > tol:
        raise NonConvergenceError(
            f"analytical solve did not reach tol={tol} (residual {norm:.3g} after {it} iterations)",
            best=best, diagnostics=diag.__dict__)
    return best, diag
