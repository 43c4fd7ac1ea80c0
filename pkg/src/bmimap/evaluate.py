"""Batch mapping of arm records and accuracy metrics against reported zBMI.

Every record gets its own seed, derived from the master seed and the
record key, so results do not depend on record order, on filtering or on
the number of worker processes.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .analytical import PercentileMoments, map_percentile_to_z_analytical
from .charts import ChartRegistry
from .errors import BmiMapError, DomainError, NonConvergenceError
from .optimizer import OptimConfig, map_bmi_to_z_optim, map_percentile_to_z_optim
from .rng import derive_seed
from .sampler import DEFAULT_N, map_bmi_to_z_sampling, map_percentile_to_z_sampling

SOURCES = ("percentile", "bmi")
METHOD_CHOICES = ("analytical", "sampling", "optim", "all")
# Reported methods; the optimization run yields two estimates.
ESTIMATORS = ("analytical", "sampling", "optimization_sample", "optimization_distribution")
TARGETS = ("mean", "sd")
ESTIMATE_CHOICES = ("sample", "distribution", "both")
FLAG_FILTERS = ("no_reported_chart", "unadjusted_sd", "imputed_from_change_score")


def _pairs_to_diffs(pairs):
    arr = np.asarray(list(pairs), dtype=float)
    if arr.size == 0:
        raise DomainError("need at least one (estimated, reported) pair")
    arr = arr.reshape(-1, 2)
    return arr[:, 0] - arr[:, 1]


def rmse(pairs) -> float:
    d = _pairs_to_diffs(pairs)
    return float(math.sqrt(np.mean(d * d)))


def mae(pairs) -> float:
    return float(np.mean(np.abs(_pairs_to_diffs(pairs))))


@dataclass(frozen=True)
class EvalConfig:
    source: str = "percentile"
    method: str = "all"
    optim: OptimConfig | None = None
    n_sampling: int = DEFAULT_N
    master_seed: int = 0
    age_kind: str = "normal"
    estimates: str = "both"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise DomainError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.method not in METHOD_CHOICES:
            raise DomainError(f"method must be one of {METHOD_CHOICES}, got {self.method!r}")
        if self.estimates not in ESTIMATE_CHOICES:
            raise DomainError(f"estimates must be one of {ESTIMATE_CHOICES}, got {self.estimates!r}")
        if self.source == "bmi" and self.method == "analytical":
            raise DomainError("the analytical method only maps percentile data")

    @property
    def optim_config(self) -> OptimConfig:
        if self.optim is not None:
            return self.optim
        return OptimConfig.percentile_default() if self.source == "percentile" else OptimConfig.bmi_default()

    @property
    def methods(self) -> tuple[str, ...]:
        if self.method != "all":
            return (self.method,)
        return ("analytical", "sampling", "optim") if self.source == "percentile" else ("sampling", "optim")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optim"] = self.optim_config.to_dict()
        return d


@dataclass
class MappedRow:
    """One record mapped by one estimator (or the error that stopped it)."""

    trial_id: str
    arm_id: str
    timepoint: str
    estimator: str
    source: str
    seed: int
    chart: str = ""
    flags: str = ""
    status: str = "ok"
    message: str = ""
    mean: float = math.nan
    sd: float = math.nan
    converged: bool = False
    iterations: int = 0
    n_samples: int = 0
    truncated_fraction: float = math.nan
    dist_mean: float = math.nan
    dist_sd: float = math.nan


@dataclass
class EvaluationRow:
    trial_id: str
    arm_id: str
    timepoint: str
    estimator: str
    target: str
    estimated: float
    reported: float
    converged: bool
    flags: frozenset = field(default_factory=frozenset)
    chart: str = ""

    @property
    def error(self) -> float:
        return self.estimated - self.reported


@dataclass
class BatchResult:
    mapped: list
    rows: list
    errors: list
    metrics: list


def record_seed(master_seed: int, record) -> int:
    return derive_seed(master_seed, record.trial_id, record.arm_id, record.timepoint)


def _rows_from(base, estimator, result=None, error=None):
    row = MappedRow(estimator=estimator, **base)
    if error is not None:
        row.status, row.message = "error", f"{type(error).__name__}: {error}"
        return row
    row.mean, row.sd = float(result.mean), float(result.sd)
    row.converged = bool(result.converged)
    row.iterations = int(result.iterations)
    row.n_samples = int(result.n_samples)
    row.truncated_fraction = float(result.diagnostics.get("truncated_fraction", math.nan))
    if result.dist_mean is not None:
        row.dist_mean, row.dist_sd = float(result.dist_mean), float(result.dist_sd)
    return row


def map_record(record, cfg: EvalConfig, charts: dict) -> list[MappedRow]:
    """Map one record with every configured method.

    Failures become rows with status "error" rather than exceptions.
    ``charts`` maps chart id to a loaded LmsChart or to the error raised
    while loading it.
    """
    seed = record_seed(cfg.master_seed, record)
    base = dict(trial_id=record.trial_id, arm_id=record.arm_id, timepoint=record.timepoint,
                source=cfg.source, seed=seed, flags=";".join(sorted(record.flags)))
    obs = record.outcome(cfg.source)
    out = []
    names = {"optim": tuple(f"optimization_{k}" for k in ("sample", "distribution")
                            if cfg.estimates in (k, "both"))}

    def fail(exc):
        for m in cfg.methods:
            for est in names.get(m, (m,)):
                out.append(_rows_from(base, est, error=exc))
        return out

    if obs is None:
        return fail(DomainError(f"record has no {cfg.source} outcome"))
    if cfg.source == "bmi":
        demo = record.demographics
        base["chart"] = record.chart_id
        if demo is None:
            return fail(DomainError("BMI mapping needs age data (mean_age/sd_age or age_min/age_max)"))
        chart = charts.get(demo.chart_id)
        if chart is None or isinstance(chart, Exception):
            return fail(chart or DomainError(f"chart {demo.chart_id!r} not loaded"))
    else:
        obs = PercentileMoments(obs.mean, obs.sd)

    for m in cfg.methods:
        try:
            if m == "analytical":
                try:
                    dist, diag = map_percentile_to_z_analytical(obs)
                    res = _Analytic(dist.m_z, dist.s_z, True, diag.iterations)
                except NonConvergenceError as exc:
                    res = _Analytic(exc.best.m_z, exc.best.s_z, False, exc.diagnostics.get("iterations", 0))
                out.append(_rows_from(base, "analytical", res))
            elif m == "sampling":
                if cfg.source == "percentile":
                    res = map_percentile_to_z_sampling(obs, n=cfg.n_sampling, seed=seed)
                else:
                    res = map_bmi_to_z_sampling(obs, demo, chart, n=cfg.n_sampling, age_kind=cfg.age_kind, seed=seed)
                out.append(_rows_from(base, "sampling", res))
            else:
                ocfg = cfg.optim_config.with_seed(seed)
                if cfg.source == "percentile":
                    res = map_percentile_to_z_optim(obs, ocfg)
                else:
                    res = map_bmi_to_z_optim(obs, demo, chart, age_kind=cfg.age_kind, cfg=ocfg)
                if cfg.estimates != "distribution":
                    out.append(_rows_from(base, "optimization_sample", res))
                if cfg.estimates != "sample":
                    dist_row = _rows_from(base, "optimization_distribution", res)
                    dist_row.mean, dist_row.sd = dist_row.dist_mean, dist_row.dist_sd
                    out.append(dist_row)
        except BmiMapError as exc:
            for est in names.get(m, (m,)):
                out.append(_rows_from(base, est, error=exc))
    return out


@dataclass
class _Analytic:
    mean: float
    sd: float
    converged: bool
    iterations: int
    n_samples: int = 0
    dist_mean: float | None = None
    dist_sd: float | None = None
    diagnostics: dict = field(default_factory=dict)


def _map_task(args):
    record, cfg, charts = args
    return map_record(record, cfg, charts)


def load_charts_for(records, cfg: EvalConfig, registry: ChartRegistry) -> dict:
    """Chart id -> LmsChart, or -> the ChartError if it cannot be loaded."""
    charts = {}
    if cfg.source != "bmi":
        return charts
    for rec in records:
        cid = rec.chart_id
        if cid not in charts:
            try:
                charts[cid] = registry.get(cid)
            except BmiMapError as exc:
                charts[cid] = exc
    return charts


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def map_records(records, cfg: EvalConfig, registry: ChartRegistry | None = None,
                workers: int = 1) -> list[MappedRow]:
    records = list(records)
    charts = load_charts_for(records, cfg, registry or ChartRegistry())
    tasks = [(rec, cfg, {rec.chart_id: charts[rec.chart_id]} if rec.chart_id in charts else {})
             for rec in records]
    if workers <= 1 or len(tasks) <= 1:
        results = [_map_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_map_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [row for rows in results for row in rows]


def parse_filters(filters) -> tuple[set, set, bool]:
    """Split filter names into (flags to exclude, chart ids to keep, converged-only)."""
    flags, charts, converged_only = set(), set(), False
    for f in filters or ():
        f = f.strip()
        if not f:
            continue
        if f in FLAG_FILTERS:
            flags.add(f)
        elif f.startswith("chart:") and len(f) > 6:
            charts.add(f[6:].lower())
        elif f in ("converged", "converged-only", "converged_only"):
            converged_only = True
        else:
            raise DomainError(
                f"unknown filter {f!r}; expected one of {FLAG_FILTERS}, chart:<id> or converged")
    return flags, charts, converged_only


def filter_records(records, filters):
    flags, charts, _ = parse_filters(filters)
    return [r for r in records
            if not (r.flags & flags) and (not charts or r.chart_id in charts)]


def evaluation_rows(records, mapped, filters=()) -> tuple[list, list]:
    """Pair mapped rows with reported zBMI.  Returns (rows, errors)."""
    _, _, converged_only = parse_filters(filters)
    by_key = {r.key: r for r in records}
    rows, errors = [], []
    for m in mapped:
        rec = by_key[(m.trial_id, m.arm_id, m.timepoint)]
        target = rec.outcome("zbmi")
        if m.status != "ok":
            errors.append(m)
            continue
        if target is None:
            err = MappedRow(**{**asdict(m), "status": "error",
                               "message": "DomainError: record has no reported zbmi outcome"})
            errors.append(err)
            continue
        if converged_only and not m.converged:
            continue
        for tgt, est, rep in (("mean", m.mean, target.mean), ("sd", m.sd, target.sd)):
            rows.append(EvaluationRow(m.trial_id, m.arm_id, m.timepoint, m.estimator, tgt, est, rep,
                                      m.converged, rec.flags, rec.chart_id if m.source == "bmi" else ""))
    return rows, errors


def summarize(rows) -> list[dict]:
    """Per-estimator RMSE/MAE for mean and SD, estimators in canonical order."""
    out = []
    present = [e for e in ESTIMATORS if any(r.estimator == e for r in rows)]
    for est in present:
        entry = {"method": est}
        for tgt in TARGETS:
            pairs = [(r.estimated, r.reported) for r in rows if r.estimator == est and r.target == tgt]
            entry[f"rmse_{tgt}"] = rmse(pairs) if pairs else math.nan
            entry[f"mae_{tgt}"] = mae(pairs) if pairs else math.nan
            entry[f"n_{tgt}"] = len(pairs)
        out.append(entry)
    return out


def run_batch(records, cfg: EvalConfig, filters=(), registry: ChartRegistry | None = None,
              workers: int = 1) -> BatchResult:
    records = filter_records(records, filters)
    mapped = map_records(records, cfg, registry, workers)
    rows, errors = evaluation_rows(records, mapped, filters)
    return BatchResult(mapped, rows, errors, summarize(rows))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, frozenset):
        return ";".join(sorted(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


MAPPED_COLUMNS = tuple(MappedRow.__dataclass_fields__)
ROW_COLUMNS = ("trial_id", "arm_id", "timepoint", "method", "target", "estimated", "reported",
               "error", "converged", "flags", "chart")
SUMMARY_COLUMNS = ("method", "rmse_mean", "mae_mean", "rmse_sd", "mae_sd", "n_mean", "n_sd")
SCATTER_COLUMNS = ("method", "target", "reported", "estimated")


def write_mapped(path, mapped):
    write_csv(path, MAPPED_COLUMNS, ([getattr(m, c) for c in MAPPED_COLUMNS] for m in mapped))


def write_rows(path, rows):
    write_csv(path, ROW_COLUMNS, ((r.trial_id, r.arm_id, r.timepoint, r.estimator, r.target, r.estimated,
                                   r.reported, r.error, r.converged, r.flags, r.chart) for r in rows))


def write_summary(path, metrics):
    write_csv(path, SUMMARY_COLUMNS, ([m[c] for c in SUMMARY_COLUMNS] for m in metrics))


def write_scatter(path, rows):
    write_csv(path, SCATTER_COLUMNS, ((r.estimator, r.target, r.reported, r.estimated) for r in rows))
