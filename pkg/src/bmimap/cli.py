"""Command-line interface: map, evaluate, sweep, charts.

Exit status 0 on success, 1 for invalid input or usage, 2 for runtime
failures (including fatal non-convergence).  Errors are written to stderr
as a single JSON object.  Output files are only written once the whole run
has succeeded.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .analytical import PercentileMoments
from .charts import ChartRegistry, available_bundled, default_chart_for_country, load_chart, min_z_bound
from .errors import BmiMapError, NonConvergenceError
from .evaluate import (ESTIMATE_CHOICES, METHOD_CHOICES, SOURCES, EvalConfig, default_workers, filter_records,
                       load_charts_for, map_records, parse_filters, run_batch, write_mapped,
                       write_rows, write_scatter, write_summary)
from .models import AggregateOutcome
from .optimizer import OptimConfig, convergence_sweep, map_bmi_to_z_optim, map_percentile_to_z_optim
from .rng import derive_seed
from .sampler import AGE_KINDS, DEFAULT_N, Demographics
from .synthetic import age_windows, cohort_grid, percentile_grid
from .trialdata import ArmRecord, load_records

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
METADATA_NAME = "metadata.json"

# Options that define a run's results; saved to metadata and restored on rerun.
_RUN_KEYS = {
    "map": ("source", "method", "mean", "sd", "records", "percentile_scale", "mean_age_months",
            "sd_age_months", "prop_male", "chart", "country", "age_dist", "n_samples", "delta_step",
            "delta_tol", "n_max", "optim_samples", "seed", "chart_dir", "estimates"),
    "evaluate": ("source", "method", "records", "percentile_scale", "filters", "age_dist", "n_samples",
                 "delta_step", "delta_tol", "n_max", "optim_samples", "seed", "chart_dir", "scatter",
                 "estimates"),
}


class UsageError(BmiMapError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _csv_floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


class _Staged:
    """Collects output files and moves them into place only on commit."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.files: dict[str, str] = {}

    def text(self, name, content):
        self.files[name] = content

    def writer(self, name, fn, *args):
        with tempfile.TemporaryDirectory() as tmp:
            p = Path(tmp) / name
            fn(p, *args)
            self.files[name] = p.read_text(encoding="utf-8")

    def commit(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name, content in self.files.items():
            tmp = self.out_dir / f".{name}.tmp"
            tmp.write_text(content, encoding="utf-8")
            os.replace(tmp, self.out_dir / name)


def _optim_config(args, source):
    base = OptimConfig.percentile_default() if source == "percentile" else OptimConfig.bmi_default()
    return OptimConfig(
        delta_step=args.delta_step if args.delta_step is not None else base.delta_step,
        delta_tol=args.delta_tol if args.delta_tol is not None else base.delta_tol,
        n_max=args.n_max, n_samples=args.optim_samples)


def _eval_config(args):
    if args.n is not None:
        args.n_samples = args.optim_samples = args.n
        args.n = None
    return EvalConfig(source=args.source, method=args.method, optim=_optim_config(args, args.source),
                      n_sampling=args.n_samples, master_seed=args.seed, age_kind=args.age_dist,
                      estimates=args.estimates)


def _metadata(args, command, cfg, checksums):
    meta = {
        "tool": "bmimap",
        "version": __version__,
        "command": command,
        "seed": args.seed,
        "options": {k: getattr(args, k) for k in _RUN_KEYS[command]},
        "resolved_config": cfg.to_dict(),
        "chart_checksums": checksums,
    }
    if getattr(args, "records", None):
        meta["records_sha256"] = _sha256(args.records)
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"


def _apply_metadata(args, command):
    meta = json.loads(Path(args.from_metadata).read_text(encoding="utf-8"))
    if meta.get("command") != command:
        raise UsageError(f"metadata is for {meta.get('command')!r}, not {command!r}")
    for k, v in meta["options"].items():
        setattr(args, k, v)
    if meta.get("records_sha256") and _sha256(args.records) != meta["records_sha256"]:
        raise UsageError(f"records file {args.records} changed since the recorded run")
    return meta


def _check_checksums(meta, checksums):
    if meta is None:
        return
    recorded = meta.get("chart_checksums", {})
    for cid, digest in checksums.items():
        if cid in recorded and recorded[cid] != digest:
            raise UsageError(f"chart {cid!r} differs from the recorded run")


def _loaded_checksums(charts):
    """Chart checksums; a chart that failed to load aborts the run."""
    for c in charts.values():
        if isinstance(c, Exception):
            raise c
    return {cid: c.checksum for cid, c in sorted(charts.items())}


def _inline_record(args) -> ArmRecord:
    if args.mean is None or args.sd is None:
        raise UsageError("give --records FILE or both --mean and --sd")
    scale = args.percentile_scale or "unit"
    mean, sd = args.mean, args.sd
    if args.source == "percentile" and scale == "percent":
        mean, sd = mean / 100.0, sd / 100.0
    outcome = AggregateOutcome(args.source, mean, sd)
    if args.source == "percentile" and not 0.0 <= mean <= 1.0:
        raise UsageError(f"percentile mean {mean} outside [0, 1]; check --percentile-scale")
    demo = None
    if args.source == "bmi":
        if args.mean_age_months is None or args.sd_age_months is None:
            raise UsageError("BMI mapping needs --mean-age-months and --sd-age-months")
        chart = (args.chart or default_chart_for_country(args.country)).lower()
        demo = Demographics(args.mean_age_months, args.sd_age_months, args.prop_male, chart)
    return ArmRecord("inline", "inline", "baseline", {args.source: outcome}, demo,
                     country=args.country, reported_chart=(args.chart or None) and args.chart.lower())


def cmd_map(args) -> int:
    meta = _apply_metadata(args, "map") if args.from_metadata else None
    cfg = _eval_config(args)
    if args.records:
        records = load_records(args.records, args.percentile_scale or "percent")
    else:
        records = [_inline_record(args)]
    registry = ChartRegistry(args.chart_dir)
    checksums = _loaded_checksums(load_charts_for(records, cfg, registry))
    _check_checksums(meta, checksums)
    inline = not args.records
    mapped = map_records(records, cfg, registry, workers=args.workers or default_workers())
    if inline:
        errors = [m for m in mapped if m.status != "ok"]
        if len(errors) == len(mapped):
            raise BmiMapError(errors[0].message)

    buf = io.StringIO()
    for m in mapped:
        if m.status == "ok":
            extra = f"  converged={m.converged} iterations={m.iterations}"
            print(f"{m.trial_id}/{m.arm_id}/{m.timepoint} {m.estimator:<26} "
                  f"m_z={m.mean:.6f} s_z={m.sd:.6f}{extra}", file=buf)
        else:
            print(f"{m.trial_id}/{m.arm_id}/{m.timepoint} {m.estimator:<26} error: {m.message}", file=buf)
    if args.out:
        staged = _Staged(args.out)
        staged.writer("mapped.csv", write_mapped, mapped)
        staged.text(METADATA_NAME, _metadata(args, "map", cfg, checksums))
        staged.commit()
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    meta = _apply_metadata(args, "evaluate") if args.from_metadata else None
    if not args.records:
        raise UsageError("--records is required")
    cfg = _eval_config(args)
    filters = _split_filters(args.filters)
    parse_filters(filters)
    records = load_records(args.records, args.percentile_scale or "percent")
    registry = ChartRegistry(args.chart_dir)
    checksums = _loaded_checksums(load_charts_for(filter_records(records, filters), cfg, registry))
    _check_checksums(meta, checksums)
    result = run_batch(records, cfg, filters, registry, workers=args.workers or default_workers())

    staged = _Staged(args.out)
    staged.writer("mapped.csv", write_mapped, result.mapped)
    staged.writer("rows.csv", write_rows, result.rows)
    staged.writer("summary.csv", write_summary, result.metrics)
    staged.writer("errors.csv", write_mapped, result.errors)
    if args.scatter:
        staged.writer("scatter.csv", write_scatter, result.rows)
    staged.text(METADATA_NAME, _metadata(args, "evaluate", cfg, checksums))
    staged.commit()
    for m in result.metrics:
        print(f"{m['method']:<26} rmse_mean={m['rmse_mean']:.4f} mae_mean={m['mae_mean']:.4f} "
              f"rmse_sd={m['rmse_sd']:.4f} mae_sd={m['mae_sd']:.4f} n={m['n_mean']}")
    if result.errors:
        print(f"{len(result.errors)} record/method errors, see errors.csv", file=sys.stderr)
    return EXIT_OK


def _split_filters(values):
    out = []
    for v in values or ():
        out.extend(x for x in v.split(",") if x.strip())
    return out


def _sweep_runner(args):
    """(run_one, n_records) for the chosen source and corpus."""
    if args.source == "percentile":
        if args.records:
            corpus = [PercentileMoments(r.outcome("percentile").mean, r.outcome("percentile").sd)
                      for r in load_records(args.records, args.percentile_scale or "percent")
                      if r.outcome("percentile") is not None]
        else:
            corpus = [pm for _, pm in percentile_grid()]

        def run_one(i, step, tol):
            cfg = OptimConfig(step, tol, args.n_max, args.optim_samples, derive_seed(args.seed, i))
            return map_percentile_to_z_optim(corpus[i], cfg)
        return run_one, len(corpus)

    registry = ChartRegistry(args.chart_dir)
    if args.records:
        recs = [r for r in load_records(args.records, args.percentile_scale or "percent")
                if r.outcome("bmi") is not None and r.demographics is not None]
        corpus = [(r.outcome("bmi"), r.demographics, registry.get(r.chart_id)) for r in recs]
    else:
        corpus = []
        for cid in (args.charts.split(",") if args.charts else available_bundled()):
            chart = registry.get(cid.strip())
            windows = [(chart.age_min_months, chart.age_max_months)] + age_windows(chart)
            corpus += [(c.outcome, c.demographics, chart)
                       for c in cohort_grid(chart, n=args.cohort_size, seed=args.seed, windows=windows)]

    def run_one(i, step, tol):
        obs, demo, chart = corpus[i]
        cfg = OptimConfig(step, tol, args.n_max, args.optim_samples, derive_seed(args.seed, i))
        return map_bmi_to_z_optim(obs, demo, chart, age_kind=args.age_dist, cfg=cfg)
    return run_one, len(corpus)


def cmd_sweep(args) -> int:
    steps, tols = _csv_floats(args.steps), _csv_floats(args.tols)
    if not steps or not tols:
        raise UsageError("--steps and --tols each need at least one value")
    if any(not x > 0 for x in steps + tols):
        raise UsageError("steps and tolerances must be > 0")
    run_one, n = _sweep_runner(args)
    if n == 0:
        raise UsageError("sweep corpus is empty")
    rows = convergence_sweep(run_one, n, steps, tols)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "delta_tol", "delta_step", "ratio", "n", "converged", "percent_converged"])
    for r in rows:
        w.writerow([args.source, repr(r["delta_tol"]), repr(r["delta_step"]), repr(r["ratio"]), r["n"],
                    r["converged"], f"{r['percent_converged']:.1f}"])
    _emit(args.out, buf.getvalue())
    return EXIT_OK


def chart_report(directory=None):
    """Rows describing each chart; a row's status is 'ok' or 'invalid'."""
    rows = []
    if directory is None:
        paths = [(cid, None) for cid in available_bundled()]
    else:
        d = Path(directory)
        if not d.is_dir():
            raise UsageError(f"chart directory {directory} does not exist")
        paths = [(p.stem.lower(), p) for p in sorted(d.glob("*.csv"))]
    for cid, path in paths:
        try:
            chart = load_chart(path.read_bytes(), cid) if path else ChartRegistry().get(cid)
            bound, (sex, age) = min_z_bound(chart)
            rows.append({"chart": cid, "status": "ok", "rows": len(chart),
                         "age_min_months": chart.age_min_months, "age_max_months": chart.age_max_months,
                         "step_months": chart.step_months, "min_z_bound": bound, "bound_sex": sex,
                         "bound_age_months": age, "checksum": chart.checksum, "message": ""})
        except BmiMapError as exc:
            rows.append({"chart": cid, "status": "invalid", "message": str(exc)})
    return rows


_CHART_COLUMNS = ("chart", "status", "rows", "age_min_months", "age_max_months", "step_months",
                  "min_z_bound", "bound_sex", "bound_age_months", "checksum", "message")


def cmd_charts(args) -> int:
    rows = chart_report(args.chart_dir)
    if not rows:
        raise UsageError(f"no chart files (*.csv) in {args.chart_dir}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_CHART_COLUMNS)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in _CHART_COLUMNS])
    _emit(args.out, buf.getvalue())
    invalid = [r for r in rows if r["status"] != "ok"]
    if invalid:
        return _fail(BmiMapError("; ".join(f"{r['chart']}: {r['message']}" for r in invalid)),
                     EXIT_VALIDATION)
    return EXIT_OK


def _cell(v):
    if isinstance(v, float):
        return f"{v:.6g}" if math.isfinite(v) else str(v)
    return v


def _emit(out, text):
    if out:
        staged = _Staged(Path(out).parent)
        staged.text(Path(out).name, text)
        staged.commit()
    else:
        sys.stdout.write(text)


def _add_method_options(p):
    p.add_argument("--source", choices=SOURCES, default="percentile",
                   help="scale of the input data (default: percentile)")
    p.add_argument("--method", choices=METHOD_CHOICES, default="all")
    p.add_argument("--percentile-scale", choices=("unit", "percent"), default=None,
                   help="percentiles in the input as [0,1] or 0-100 "
                        "(default: percent for --records, unit for inline values)")
    p.add_argument("--age-dist", choices=AGE_KINDS, default="normal",
                   help="age distribution for BMI sampling (ages in months)")
    p.add_argument("--n-samples", type=int, default=DEFAULT_N, help="draws for the sampling method")
    p.add_argument("--optim-samples", type=int, default=1000, help="optimizer sample size")
    p.add_argument("--n", type=int, default=None, dest="n",
                   help="sample size for every selected method (overrides the two options above)")
    p.add_argument("--delta-step", "--step", type=float, default=None, dest="delta_step",
                   help="optimizer step (default 0.002 percentile, 0.01 BMI)")
    p.add_argument("--delta-tol", "--tol", type=float, default=None, dest="delta_tol",
                   help="optimizer tolerance (default 0.005 percentile, 0.1 kg/m^2 BMI)")
    p.add_argument("--n-max", "--nmax", type=int, default=5000, dest="n_max", help="optimizer iteration cap")
    p.add_argument("--estimates", choices=ESTIMATE_CHOICES, default="both",
                   help="optimization output: final-sample and/or fitted-distribution estimates")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--chart-dir", default=None,
                   help="directory of <id>.csv LMS charts (sex,age_months,lambda,mu,sigma); "
                        "bundled charts are used for ids not found there")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: all CPUs)")
    p.add_argument("--from-metadata", default=None,
                   help="repeat the run recorded in this metadata.json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="bmimap",
        description="Map aggregate BMI or percentile data to the zBMI scale. "
                    "Units: ages in months, BMI in kg/m^2, percentiles on [0,1] internally.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("map", help="map records or one inline (mean, sd) to zBMI")
    _add_method_options(p)
    p.add_argument("--records", default=None, help="records CSV")
    p.add_argument("--mean", type=float, default=None, help="inline mean (source scale)")
    p.add_argument("--sd", type=float, default=None, help="inline SD (source scale)")
    p.add_argument("--mean-age-months", type=float, default=None)
    p.add_argument("--sd-age-months", type=float, default=None)
    p.add_argument("--prop-male", type=float, default=0.5)
    p.add_argument("--chart", default=None, help="chart id (default: by --country)")
    p.add_argument("--country", default=None, help="US selects CDC, anything else IOTF")
    p.add_argument("--out", default=None, help="directory for mapped.csv and metadata.json")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("evaluate", help="map records and score against reported zBMI")
    _add_method_options(p)
    p.add_argument("--records", default=None, help="records CSV with zbmi rows (required unless --from-metadata)")
    p.add_argument("--filters", action="append", default=[],
                   help="comma-separated: no_reported_chart, unadjusted_sd, "
                        "imputed_from_change_score, chart:<id>, converged")
    p.add_argument("--scatter", action="store_true", help="also write scatter.csv")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="optimizer convergence over a (step, tol) grid")
    p.add_argument("--source", choices=SOURCES, default="percentile")
    p.add_argument("--steps", required=True, help="comma-separated step sizes")
    p.add_argument("--tols", required=True, help="comma-separated tolerances")
    p.add_argument("--records", default=None, help="records CSV (default: synthetic corpus)")
    p.add_argument("--percentile-scale", choices=("unit", "percent"), default=None)
    p.add_argument("--charts", default=None, help="charts for the synthetic BMI corpus (default: bundled)")
    p.add_argument("--cohort-size", type=int, default=10_000)
    p.add_argument("--age-dist", choices=AGE_KINDS, default="uniform")
    p.add_argument("--n-max", type=int, default=5000)
    p.add_argument("--optim-samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chart-dir", default=None)
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("charts", help="validate charts and report ranges and z bounds")
    p.add_argument("--chart-dir", default=None, help="directory of chart CSVs (default: bundled charts)")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_charts)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except NonConvergenceError as exc:
        return _fail(exc, EXIT_RUNTIME)
    except BmiMapError as exc:
        return _fail(exc, EXIT_VALIDATION)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        code = EXIT_VALIDATION if isinstance(exc, FileNotFoundError) else EXIT_RUNTIME
        return _fail(exc, code)
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
