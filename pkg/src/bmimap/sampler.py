"""Sampling method: moment-matched source distributions pushed through the
individual-level transforms.

* percentile -> z: P ~ Beta(alpha, beta) matched to (mean, SD), Z = Phi^-1(P)
* BMI -> z: B ~ lognormal matched to (mean, SD), sex ~ Bernoulli(p_male),
  age ~ normal or uniform, Z from the LMS chart entry nearest the age
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytical import PercentileMoments
from .charts import LmsChart
from .errors import DomainError, InfeasibleInputError, SamplingError
from .models import AggregateOutcome
from .rng import make_rng
from .specfun import std_normal_quantile
from .transforms import z_from_bmi

DEFAULT_N = 10_000
AGE_RETRY_BUDGET = 1000
AGE_KINDS = ("normal", "uniform")


@dataclass(frozen=True)
class Demographics:
    mean_age_months: float
    sd_age_months: float
    prop_male: float
    chart_id: str

    def __post_init__(self):
        if not (0.0 <= self.prop_male <= 1.0):
            raise DomainError(f"prop_male must be in [0, 1], got {self.prop_male}")
        if not self.sd_age_months >= 0:
            raise DomainError(f"sd_age_months must be >= 0, got {self.sd_age_months}")
        if not math.isfinite(self.mean_age_months):
            raise DomainError("mean_age_months must be finite")


@dataclass
class MappedAggregate:
    """Mapped (mean, SD) on the z scale plus method diagnostics.

    ``mean``/``sd`` are sample estimates; ``dist_mean``/``dist_sd`` are the
    fitted normal parameters where the method has them (optimization).
    """

    mean: float
    sd: float
    method: str
    n_samples: int
    converged: bool = True
    iterations: int = 0
    dist_mean: float | None = None
    dist_sd: float | None = None
    diagnostics: dict = field(default_factory=dict)


def beta_params_from_moments(mean: float, sd: float) -> tuple[float, float]:
    """Beta(alpha, beta) with the given mean and SD."""
    if not (0.0 < mean < 1.0) or not sd > 0 or sd * sd >= mean * (1.0 - mean):
        raise InfeasibleInputError(f"no beta distribution has mean={mean}, sd={sd}")
    alpha = mean * mean * ((1.0 - mean) / (sd * sd) - 1.0 / mean)
    beta = alpha * (1.0 / mean - 1.0)
    return alpha, beta


def lognormal_params_from_moments(mean: float, sd: float) -> tuple[float, float]:
    """(log-mean, log-variance) of the lognormal with the given mean and SD."""
    if not (mean > 0 and sd > 0):
        raise DomainError(f"lognormal moments need mean > 0 and sd > 0, got ({mean}, {sd})")
    cv2 = (sd / mean) ** 2
    return math.log(mean) - 0.5 * math.log1p(cv2), math.log1p(cv2)


def _draw_ages(kind, demo, rng, size):
    a, s = demo.mean_age_months, demo.sd_age_months
    if kind == "normal":
        return rng.normal(a, s, size)
    if kind == "uniform":
        return rng.uniform(a - 2.0 * s, a + 2.0 * s, size)
    raise DomainError(f"unknown age distribution {kind!r}; expected one of {AGE_KINDS}")


def sample_age(kind: str, demo: Demographics, chart: LmsChart, rng, size=None):
    """Draw ages (months), redrawing any outside the chart's range.

    Each draw gets at most ``AGE_RETRY_BUDGET`` redraws before SamplingError.
    """
    rng = make_rng(rng)
    n = 1 if size is None else int(size)
    ages = _draw_ages(kind, demo, rng, n)
    bad = ~chart.in_range(ages)
    retries = 0
    while np.any(bad):
        if retries >= AGE_RETRY_BUDGET:
            raise SamplingError(
                f"{int(bad.sum())} age draws still outside chart {chart.id!r} range "
                f"[{chart.age_min_months}, {chart.age_max_months}] after {AGE_RETRY_BUDGET} redraws "
                f"(mean {demo.mean_age_months}, sd {demo.sd_age_months})")
        ages[bad] = _draw_ages(kind, demo, rng, int(bad.sum()))
        bad = ~chart.in_range(ages)
        retries += 1
    return float(ages[0]) if size is None else ages


def sample_sex(prop_male: float, rng, size: int):
    """Boolean array, True for male."""
    return make_rng(rng).random(size) < prop_male


def _summary(z, method, **kw) -> MappedAggregate:
    return MappedAggregate(mean=float(np.mean(z)), sd=float(np.std(z, ddof=1)),
                           method=method, n_samples=int(z.size), **kw)


def map_percentile_to_z_sampling(obs: PercentileMoments, n: int = DEFAULT_N, seed=0) -> MappedAggregate:
    if n < 2:
        raise DomainError("need at least 2 samples")
    alpha, beta = beta_params_from_moments(obs.mean, obs.sd)
    rng = make_rng(seed)
    p = rng.beta(alpha, beta, n)
    redraws = 0
    edge = (p <= 0.0) | (p >= 1.0)
    while np.any(edge):
        p[edge] = rng.beta(alpha, beta, int(edge.sum()))
        redraws += int(edge.sum())
        edge = (p <= 0.0) | (p >= 1.0)
    z = std_normal_quantile(p)
    return _summary(z, "sampling", diagnostics={"alpha": alpha, "beta": beta, "edge_redraws": redraws})


def map_bmi_to_z_sampling(obs: AggregateOutcome, demo: Demographics, chart: LmsChart,
                          n: int = DEFAULT_N, age_kind: str = "normal", seed=0) -> MappedAggregate:
    if obs.scale != "bmi":
        raise DomainError(f"expected a bmi outcome, got {obs.scale!r}")
    if n < 2:
        raise DomainError("need at least 2 samples")
    m_b, s_b_sq = lognormal_params_from_moments(obs.mean, obs.sd)
    rng = make_rng(seed)
    bmi = rng.lognormal(m_b, math.sqrt(s_b_sq), n)
    male = sample_sex(demo.prop_male, rng, n)
    ages = sample_age(age_kind, demo, chart, rng, size=n)
    lam, mu, sig = chart.lookup_many(ages, male)
    z = z_from_bmi(bmi, lam, mu, sig)
    return _summary(z, "sampling", diagnostics={"m_B": m_b, "s_B_sq": s_b_sq, "age_kind": age_kind})
