"""Synthetic aggregate data with known z-score distributions.

Used by the convergence sweep and by the test suite: the generating
(m_z, s_z) is known, so mapped estimates can be scored against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytical import PercentileMoments, ZDistribution, percentile_moments
from .charts import LmsChart
from .models import AggregateOutcome
from .optimizer import truncate_z
from .rng import make_rng
from .sampler import Demographics
from .transforms import bmi_from_z

PERCENTILE_GRID_M = (-2.0, -1.0, 0.0, 1.0, 2.0)
PERCENTILE_GRID_S = (0.5, 1.0, 1.5, 2.0)
COHORT_GRID_M = (-0.5, 0.0, 0.5)
COHORT_GRID_S = (0.8, 1.0, 1.2)


def percentile_grid():
    """[(ZDistribution, PercentileMoments)] over the 5 x 4 (m_z, s_z) grid."""
    out = []
    for m in PERCENTILE_GRID_M:
        for s in PERCENTILE_GRID_S:
            d = ZDistribution(m, s)
            out.append((d, percentile_moments(d)))
    return out


@dataclass(frozen=True)
class Cohort:
    """Aggregate BMI of a simulated cohort plus the truth behind it."""

    outcome: AggregateOutcome
    demographics: Demographics
    m_z: float
    s_z: float
    z_mean: float
    z_sd: float
    truncated_fraction: float


def bmi_cohort(chart: LmsChart, m_z: float, s_z: float, age_lo: float | None = None,
               age_hi: float | None = None, n: int = 10_000, prop_male: float = 0.5,
               seed=0) -> Cohort:
    """Simulate individuals with z ~ N(m_z, s_z^2) and average their BMI.

    Ages are uniform on [age_lo, age_hi] (default: the chart's full range)
    and the returned demographics describe that same uniform distribution
    (mean = midpoint, SD = width / 4, read with the "uniform" age kind).
    Z-scores past the chart's validity bound are truncated the same way the
    optimization method truncates, and ``z_mean``/``z_sd`` are the realized
    zBMI of the cohort as it would be recomputed from each child's BMI.
    """
    lo = chart.age_min_months if age_lo is None else age_lo
    hi = chart.age_max_months if age_hi is None else age_hi
    rng = make_rng(seed)
    z = rng.normal(m_z, s_z, n)
    male = rng.random(n) < prop_male
    ages = rng.uniform(lo, hi, n)
    lam, mu, sig = chart.lookup_many(ages, male)
    z_eff = truncate_z(z, lam, sig)
    bmi = bmi_from_z(z_eff, lam, mu, sig)
    outcome = AggregateOutcome("bmi", float(bmi.mean()), float(bmi.std(ddof=1)), n)
    demo = Demographics(0.5 * (lo + hi), 0.25 * (hi - lo), prop_male, chart.id)
    return Cohort(outcome, demo, m_z, s_z, float(z_eff.mean()), float(z_eff.std(ddof=1)),
                  float(np.mean(z_eff != z)))


def cohort_grid(chart: LmsChart, n: int = 10_000, seed=0, windows=None):
    """Cohorts over the 3 x 3 (m_z, s_z) grid for each age window.

    ``windows`` is a list of (lo, hi) month ranges; None means the full
    chart range only.
    """
    windows = windows or [(chart.age_min_months, chart.age_max_months)]
    out = []
    k = 0
    for lo, hi in windows:
        for m in COHORT_GRID_M:
            for s in COHORT_GRID_S:
                out.append(bmi_cohort(chart, m, s, lo, hi, n=n, seed=(int(seed), k)))
                k += 1
    return out


def age_windows(chart: LmsChart, half_width: float = 24.0):
    """Three windows of +/- half_width months: near the start, middle and end of the chart."""
    lo, hi = chart.age_min_months, chart.age_max_months
    centers = (lo + half_width + 6.0, 0.5 * (lo + hi), hi - half_width - 6.0)
    return [(c - half_width, c + half_width) for c in centers]
