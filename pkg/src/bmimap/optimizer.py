"""Optimization method: fixed-step adjustment of a normal z distribution.

One sample of z-scores is drawn at N(0, 1).  Each iteration maps the
current sample to the source scale (percentile or BMI), compares its mean
and SD with the observed values, moves (m_z, s_z) by +/- step where the
residual exceeds the tolerance, and shifts/rescales the existing sample so
each draw keeps its standard-normal coordinate (z - m_z) / s_z.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .analytical import PercentileMoments
from .charts import LmsChart
from .errors import DomainError, StepRejectionError
from .models import AggregateOutcome
from .rng import make_rng
from .sampler import Demographics, MappedAggregate, sample_age, sample_sex
from .specfun import std_normal_cdf
from .transforms import bmi_from_z

TRUNCATION_FACTOR = 0.99
OSCILLATION_RUN = 50


@dataclass(frozen=True)
class OptimConfig:
    delta_step: float
    delta_tol: float
    n_max: int = 5000
    n_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.delta_step > 0 or not self.delta_tol > 0:
            raise DomainError("delta_step and delta_tol must be > 0")
        if self.n_max < 1 or self.n_samples < 2:
            raise DomainError("need n_max >= 1 and n_samples >= 2")

    @classmethod
    def percentile_default(cls, **kw) -> "OptimConfig":
        return cls(**{"delta_step": 0.002, "delta_tol": 0.005, **kw})

    @classmethod
    def bmi_default(cls, **kw) -> "OptimConfig":
        return cls(**{"delta_step": 0.01, "delta_tol": 0.1, **kw})

    def with_seed(self, seed) -> "OptimConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return asdict(self)


def smooth_update(z, m_z, s_z, delta_m, delta_s):
    """Move samples from N(m_z, s_z^2) to N(m_z + delta_m, (s_z + delta_s)^2)."""
    if not s_z > 0:
        raise StepRejectionError(f"s_z must be > 0, got {s_z}")
    if not s_z + delta_s > 0:
        raise StepRejectionError(f"s_z + delta_s = {s_z + delta_s} <= 0")
    z = np.asarray(z, dtype=float) if np.ndim(z) else float(z)
    return (1.0 + delta_s / s_z) * (z - m_z) + (m_z + delta_m)


def delta_from_comparison(simulated: float, observed: float, cfg: OptimConfig) -> float:
    diff = simulated - observed
    if abs(diff) <= cfg.delta_tol:
        return 0.0
    return cfg.delta_step if diff < 0 else -cfg.delta_step


def truncate_z(z, lam, sigma):
    """Pull z-scores beyond the LMS validity bound back to 0.99 of it.

    For lambda < 0 the bound is the upper limit -1/(lambda*sigma); for a
    positive lambda (custom charts) it is a lower limit and is mirrored.
    lambda == 0 has no bound.  Scalars or arrays.
    """
    z_arr = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore"):
        bound = np.where(lam == 0, np.inf, -1.0 / (np.where(lam == 0, 1.0, lam) * sigma))
    over = ((lam < 0) & (z_arr > bound)) | ((lam > 0) & (z_arr < bound))
    out = np.where(over, TRUNCATION_FACTOR * bound, z_arr)
    return float(out) if np.ndim(out) == 0 else out


class _Tracker:
    """Residual sign alternation and step bookkeeping for diagnostics."""

    def __init__(self):
        self.steps = {"mean_up": 0, "mean_down": 0, "sd_up": 0, "sd_down": 0, "sd_clamped": 0}
        self._last = [0.0, 0.0]
        self._run = [0, 0]
        self.max_run = [0, 0]

    def record(self, dm, ds):
        for k, d in enumerate((dm, ds)):
            if d != 0 and self._last[k] != 0 and np.sign(d) != np.sign(self._last[k]):
                self._run[k] += 1
            else:
                self._run[k] = 0
            self.max_run[k] = max(self.max_run[k], self._run[k])
            self._last[k] = d
        if dm > 0:
            self.steps["mean_up"] += 1
        elif dm < 0:
            self.steps["mean_down"] += 1

    @property
    def oscillating(self):
        return self.max_run[0] > OSCILLATION_RUN or self.max_run[1] > OSCILLATION_RUN


def _optimize(obs_mean, obs_sd, base, to_source, cfg, truncate=None, method="optimization"):
    m, s = 0.0, 1.0
    z = np.array(base, dtype=float)
    tracker = _Tracker()
    max_trunc = 0.0
    t = 0
    while True:
        if truncate is None:
            z_eff, trunc_frac = z, 0.0
        else:
            z_eff = truncate(z)
            trunc_frac = float(np.mean(z_eff != z))
        max_trunc = max(max_trunc, trunc_frac)
        x = to_source(z_eff)
        x_mean, x_sd = float(np.mean(x)), float(np.std(x, ddof=1))
        res_m, res_s = x_mean - obs_mean, x_sd - obs_sd
        converged = abs(res_m) <= cfg.delta_tol and abs(res_s) <= cfg.delta_tol
        if converged or t >= cfg.n_max:
            break
        dm = delta_from_comparison(x_mean, obs_mean, cfg)
        ds = delta_from_comparison(x_sd, obs_sd, cfg)
        if s + ds <= 0:
            ds = cfg.delta_step - s
            tracker.steps["sd_clamped"] += 1
        elif ds > 0:
            tracker.steps["sd_up"] += 1
        elif ds < 0:
            tracker.steps["sd_down"] += 1
        tracker.record(dm, ds)
        z = smooth_update(z, m, s, dm, ds)
        m += dm
        s += ds
        t += 1

    return MappedAggregate(
        mean=float(np.mean(z_eff)), sd=float(np.std(z_eff, ddof=1)), method=method,
        n_samples=int(z.size), converged=bool(converged), iterations=t, dist_mean=m, dist_sd=s,
        diagnostics={
            "source_mean": x_mean, "source_sd": x_sd,
            "residual_mean": res_m, "residual_sd": res_s,
            "truncated_fraction": trunc_frac, "max_truncated_fraction": max_trunc,
            "oscillating": tracker.oscillating, "max_alternation_run": list(tracker.max_run),
            "steps": dict(tracker.steps),
        })


def map_percentile_to_z_optim(obs: PercentileMoments, cfg: OptimConfig | None = None) -> MappedAggregate:
    cfg = cfg or OptimConfig.percentile_default()
    if not (0.0 < obs.mean < 1.0) or obs.sd < 0:
        raise DomainError(f"invalid percentile moments ({obs.mean}, {obs.sd})")
    rng = make_rng(cfg.seed)
    base = rng.standard_normal(cfg.n_samples)
    return _optimize(obs.mean, obs.sd, base, std_normal_cdf, cfg)


def map_bmi_to_z_optim(obs: AggregateOutcome, demo: Demographics, chart: LmsChart,
                       age_kind: str = "normal", cfg: OptimConfig | None = None) -> MappedAggregate:
    cfg = cfg or OptimConfig.bmi_default()
    if obs.scale != "bmi":
        raise DomainError(f"expected a bmi outcome, got {obs.scale!r}")
    if not (obs.mean > 0 and obs.sd > 0):
        raise DomainError(f"BMI mean and SD must be > 0, got ({obs.mean}, {obs.sd})")
    rng = make_rng(cfg.seed)
    n = cfg.n_samples
    base = rng.standard_normal(n)
    male = sample_sex(demo.prop_male, rng, n)
    ages = sample_age(age_kind, demo, chart, rng, size=n)
    lam, mu, sig = chart.lookup_many(ages, male)

    def truncate(z):
        return truncate_z(z, lam, sig)

    def to_bmi(z):
        return bmi_from_z(z, lam, mu, sig)

    return _optimize(obs.mean, obs.sd, base, to_bmi, cfg, truncate=truncate)


def convergence_sweep(run_one, n_records: int, steps, tols):
    """Percent converged over a (step, tol) grid.

    ``run_one(index, step, tol)`` maps record ``index`` and returns a
    MappedAggregate.  Returns rows of dicts with keys delta_tol, delta_step,
    ratio, n, converged, percent_converged.
    """
    steps = list(steps)
    tols = list(tols)
    if not steps or not tols:
        raise DomainError("sweep needs at least one step and one tolerance")
    rows = []
    for tol in tols:
        for step in steps:
            ok = sum(bool(run_one(i, step, tol).converged) for i in range(n_records))
            rows.append({"delta_tol": tol, "delta_step": step, "ratio": step / tol, "n": n_records,
                         "converged": ok,
                         "percent_converged": 100.0 * ok / n_records if n_records else math.nan})
    return rows
