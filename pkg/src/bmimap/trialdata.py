"""Arm-level trial records: CSV ingestion and reconstruction rules.

One CSV row holds one outcome scale for one arm at one time point; rows that
share (trial_id, arm_id, timepoint) are grouped into a single ArmRecord.
Ages are stored in months and percentiles on [0, 1].

Reconstructions applied at load time, each leaving a flag on the record:

* ``imputed_from_change_score``: a follow-up row gives ``change_score``
  instead of ``mean``/``sd``; the mean is baseline + change and the SD is
  copied from baseline.
* ``unadjusted_sd``: the row carries ``design_effect``, ``icc`` or
  ``cluster_size``; SDs are divided by sqrt(design effect).
* ``no_reported_chart``: the chart column is empty and the chart was chosen
  from the country.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .charts import default_chart_for_country
from .errors import DomainError, RecordParseError, ValidationError
from .models import SCALES, AggregateOutcome
from .sampler import Demographics

__all__ = [
    "AggregateOutcome", "ArmRecord", "RECORD_COLUMNS", "EXTRA_COLUMNS", "DEFAULT_ICC",
    "DEFAULT_PROP_MALE", "FLAGS", "reconstruct_followup", "unadjust_sd", "design_effect_from_icc",
    "age_from_range", "followup_age", "load_records", "serialize_records",
]

RECORD_COLUMNS = (
    "trial_id", "arm_id", "timepoint", "followup_months", "scale", "mean", "sd", "n",
    "mean_age", "sd_age", "age_unit", "prop_male", "country", "chart", "icc",
    "design_effect", "cluster_size", "change_score",
)
# Optional: age range in age_unit, used when mean_age/sd_age are missing.
EXTRA_COLUMNS = ("age_min", "age_max")

DEFAULT_ICC = 0.02
DEFAULT_PROP_MALE = 0.5
FLAGS = ("no_reported_chart", "unadjusted_sd", "imputed_from_change_score")
PERCENTILE_SCALES = ("unit", "percent")
AGE_UNITS = {"months": 1.0, "years": 12.0}


def reconstruct_followup(baseline: AggregateOutcome, change_mean: float) -> AggregateOutcome:
    """Follow-up outcome from a baseline and a mean change; SD carried over."""
    return AggregateOutcome(baseline.scale, baseline.mean + change_mean, baseline.sd, baseline.n)


def unadjust_sd(sd_adjusted: float, design_effect: float) -> float:
    if not sd_adjusted >= 0:
        raise DomainError(f"sd must be >= 0, got {sd_adjusted}")
    if not design_effect >= 1:
        raise DomainError(f"design effect must be >= 1, got {design_effect}")
    return sd_adjusted / math.sqrt(design_effect)


def design_effect_from_icc(icc: float, mean_cluster_size: float) -> float:
    """Variance inflation 1 + (m - 1) * ICC for mean cluster size m."""
    if not 0.0 <= icc <= 1.0:
        raise DomainError(f"icc must be in [0, 1], got {icc}")
    if not mean_cluster_size >= 1:
        raise DomainError(f"mean cluster size must be >= 1, got {mean_cluster_size}")
    return 1.0 + (mean_cluster_size - 1.0) * icc


def age_from_range(min_years: float, max_years: float) -> tuple[float, float]:
    """(mean, SD) in months from an age range in years: midpoint and range / 4."""
    if not (min_years >= 0 and max_years > min_years):
        raise DomainError(f"invalid age range [{min_years}, {max_years}]")
    return 6.0 * (min_years + max_years), 3.0 * (max_years - min_years)


def followup_age(baseline_mean_age_months: float, followup_months: float) -> float:
    if not followup_months >= 0:
        raise DomainError(f"follow-up length must be >= 0, got {followup_months}")
    return baseline_mean_age_months + followup_months


@dataclass(frozen=True)
class ArmRecord:
    trial_id: str
    arm_id: str
    timepoint: str
    outcomes: dict
    demographics: Demographics | None
    followup_months: float | None = None
    country: str | None = None
    reported_chart: str | None = None
    icc: float | None = None
    design_effect: float | None = None
    cluster_size: float | None = None
    flags: frozenset = frozenset()
    # Values as read (percentiles already on [0, 1]), one row dict per scale,
    # so records serialize back to an equivalent CSV.
    source_rows: tuple = field(default=(), compare=False, repr=False)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.trial_id, self.arm_id, self.timepoint)

    @property
    def is_baseline(self) -> bool:
        return self.timepoint == "baseline"

    @property
    def chart_id(self) -> str:
        return self.reported_chart or default_chart_for_country(self.country)

    def outcome(self, scale: str) -> AggregateOutcome | None:
        return self.outcomes.get(scale)

    def __hash__(self):
        return hash(self.key)


def _normalize_timepoint(value: str, line: int) -> str:
    v = value.strip().lower().replace(" ", "")
    if v == "baseline":
        return v
    if v.startswith("followup"):
        rest = v[len("followup"):].strip(":_-()")
        if rest == "":
            return "followup"
        if rest.isdigit():
            return f"followup:{int(rest)}"
    raise RecordParseError(f"timepoint must be 'baseline' or 'followup[:k]', got {value!r}", line)


def _num(row, name, line, *, integer=False):
    raw = (row.get(name) or "").strip()
    if raw == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise RecordParseError(f"{name}: not a number: {raw!r}", line) from None
    if not math.isfinite(value):
        raise RecordParseError(f"{name}: must be finite, got {raw!r}", line)
    if integer:
        if value != int(value) or value < 0:
            raise RecordParseError(f"{name}: must be a non-negative integer, got {raw!r}", line)
        return int(value)
    return value


def _text(row, name):
    raw = (row.get(name) or "").strip()
    return raw or None


def _parse_row(row, line, percentile_scale):
    """One CSV row -> plain dict of typed fields (no reconstruction yet)."""
    out = {"line": line}
    for name in ("trial_id", "arm_id", "scale"):
        if _text(row, name) is None:
            raise RecordParseError(f"{name} is required", line)
    out["trial_id"] = _text(row, "trial_id")
    out["arm_id"] = _text(row, "arm_id")
    out["timepoint"] = _normalize_timepoint(row.get("timepoint") or "", line)
    scale = _text(row, "scale").lower()
    if scale not in SCALES:
        raise RecordParseError(f"scale must be one of {SCALES}, got {scale!r}", line)
    out["scale"] = scale
    for name in ("followup_months", "mean", "sd", "mean_age", "sd_age", "prop_male", "icc",
                 "design_effect", "cluster_size", "change_score", "age_min", "age_max"):
        out[name] = _num(row, name, line)
    out["n"] = _num(row, "n", line, integer=True)
    for name in ("age_unit", "country", "chart"):
        out[name] = _text(row, name)
    if out["chart"] is not None:
        out["chart"] = out["chart"].lower()

    if scale == "percentile" and percentile_scale == "percent":
        for name in ("mean", "sd", "change_score"):
            if out[name] is not None:
                out[name] /= 100.0

    has_change = out["change_score"] is not None
    if has_change:
        if out["timepoint"] == "baseline":
            raise RecordParseError("change_score given on a baseline row", line)
        if out["mean"] is not None or out["sd"] is not None:
            raise RecordParseError("give either mean/sd or change_score, not both", line)
    elif out["mean"] is None or out["sd"] is None:
        raise RecordParseError("mean and sd are required unless change_score is given", line)
    if out["sd"] is not None and out["sd"] < 0:
        raise RecordParseError(f"sd must be >= 0, got {out['sd']}", line)
    if out["timepoint"] != "baseline" and out["followup_months"] is None:
        raise RecordParseError("followup_months is required on follow-up rows", line)
    if out["followup_months"] is not None and out["followup_months"] < 0:
        raise RecordParseError("followup_months must be >= 0", line)
    if out["prop_male"] is not None and not 0.0 <= out["prop_male"] <= 1.0:
        raise RecordParseError(f"prop_male must be in [0, 1], got {out['prop_male']}", line)
    if out["icc"] is not None and out["design_effect"] is None and out["cluster_size"] is None:
        raise RecordParseError("icc needs cluster_size (or give design_effect directly)", line)
    if out["age_unit"] is not None:
        out["age_unit"] = out["age_unit"].lower()
        if out["age_unit"] not in AGE_UNITS:
            raise RecordParseError(f"age_unit must be 'years' or 'months', got {out['age_unit']!r}", line)
    has_age = any(out[k] is not None for k in ("mean_age", "sd_age", "age_min", "age_max"))
    if has_age and out["age_unit"] is None:
        raise RecordParseError("age columns given without age_unit", line)
    if (out["age_min"] is None) != (out["age_max"] is None):
        raise RecordParseError("age_min and age_max must be given together", line)
    return out


def _design_effect(p):
    """Design effect implied by the clustering columns, or None if unclustered."""
    try:
        if p["design_effect"] is not None:
            if p["design_effect"] < 1:
                raise DomainError(f"design_effect must be >= 1, got {p['design_effect']}")
            return p["design_effect"]
        if p["cluster_size"] is not None:
            icc = DEFAULT_ICC if p["icc"] is None else p["icc"]
            return design_effect_from_icc(icc, p["cluster_size"])
    except DomainError as exc:
        raise RecordParseError(str(exc), p["line"]) from None
    return None


def _demographics(p, chart_id):
    unit = AGE_UNITS.get(p["age_unit"] or "months")
    mean_age = p["mean_age"] * unit if p["mean_age"] is not None else None
    sd_age = p["sd_age"] * unit if p["sd_age"] is not None else None
    if p["age_min"] is not None:
        try:
            r_mean, r_sd = age_from_range(p["age_min"] * unit / 12.0, p["age_max"] * unit / 12.0)
        except DomainError as exc:
            raise RecordParseError(str(exc), p["line"]) from None
        mean_age = r_mean if mean_age is None else mean_age
        sd_age = r_sd if sd_age is None else sd_age
    if mean_age is None:
        return None
    if sd_age is None:
        raise RecordParseError("sd_age (or age_min/age_max) is required with mean_age", p["line"])
    # Ages in the file describe the arm at baseline.
    if p["timepoint"] != "baseline":
        mean_age = followup_age(mean_age, p["followup_months"])
    prop_male = DEFAULT_PROP_MALE if p["prop_male"] is None else p["prop_male"]
    try:
        return Demographics(mean_age, sd_age, prop_male, chart_id)
    except DomainError as exc:
        raise RecordParseError(str(exc), p["line"]) from None


_ARM_FIELDS = ("followup_months", "mean_age", "sd_age", "age_unit", "prop_male", "country", "chart",
               "icc", "design_effect", "cluster_size", "age_min", "age_max")


def _read_rows(source):
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8-sig")
    elif isinstance(source, str) and "\n" in source:
        text = source
    elif hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8-sig") if isinstance(data, bytes) else data
    else:
        with open(source, encoding="utf-8-sig", newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text, newline=""))
    header = [h.strip() for h in (reader.fieldnames or [])]
    if not header:
        raise RecordParseError("empty records file", 1)
    reader.fieldnames = header
    missing = [c for c in RECORD_COLUMNS if c not in header]
    if missing:
        raise RecordParseError(f"missing columns: {', '.join(missing)}", 1)
    unknown = [c for c in header if c not in RECORD_COLUMNS and c not in EXTRA_COLUMNS]
    if unknown:
        raise RecordParseError(f"unknown columns: {', '.join(unknown)}", 1)
    for row in reader:
        if None in row:
            raise RecordParseError("too many fields", reader.line_num)
        if any(v is None for v in row.values()):
            raise RecordParseError("too few fields", reader.line_num)
        yield reader.line_num, row


def load_records(source, percentile_scale: str = "percent") -> list[ArmRecord]:
    """Parse a records CSV (path, bytes, text or stream) into ArmRecords.

    Records come back in order of first appearance.  Change-score follow-ups
    need a baseline row for the same trial, arm and scale somewhere in the
    file.
    """
    if percentile_scale not in PERCENTILE_SCALES:
        raise DomainError(f"percentile_scale must be one of {PERCENTILE_SCALES}")
    groups: dict[tuple, list] = {}
    for line, row in _read_rows(source):
        p = _parse_row(row, line, percentile_scale)
        groups.setdefault((p["trial_id"], p["arm_id"], p["timepoint"]), []).append(p)

    # Baseline outcomes after SD unadjustment, for change-score follow-ups.
    baselines: dict[tuple, AggregateOutcome] = {}
    for (trial, arm, tp), rows in groups.items():
        if tp == "baseline":
            for p in rows:
                if p["change_score"] is None:
                    baselines[(trial, arm, p["scale"])] = _outcome(p, _design_effect(p))

    records = []
    for (trial, arm, tp), rows in groups.items():
        first = rows[0]
        seen = set()
        for p in rows:
            for name in _ARM_FIELDS:
                if p[name] != first[name]:
                    raise RecordParseError(
                        f"{name} differs from line {first['line']} for the same trial/arm/timepoint", p["line"])
            if p["scale"] in seen:
                raise RecordParseError(f"duplicate {p['scale']} row for {trial}/{arm}/{tp}", p["line"])
            seen.add(p["scale"])
        flags = set()
        de = _design_effect(first)
        if de is not None:
            flags.add("unadjusted_sd")
        if first["chart"] is None:
            flags.add("no_reported_chart")
        chart_id = first["chart"] or default_chart_for_country(first["country"])
        outcomes = {}
        for p in rows:
            if p["change_score"] is not None:
                base = baselines.get((trial, arm, p["scale"]))
                if base is None:
                    raise RecordParseError(
                        f"change_score needs a baseline {p['scale']} row for {trial}/{arm}", p["line"])
                out = reconstruct_followup(base, p["change_score"])
                if p["n"] is not None:
                    out = AggregateOutcome(out.scale, out.mean, out.sd, p["n"])
                flags.add("imputed_from_change_score")
            else:
                out = _outcome(p, de)
            if out.scale == "percentile" and not 0.0 <= out.mean <= 1.0:
                raise ValidationError(
                    f"line {p['line']}: percentile mean {out.mean} outside [0, 1] "
                    f"(percentile scale {percentile_scale!r})")
            outcomes[p["scale"]] = out
        records.append(ArmRecord(
            trial_id=trial, arm_id=arm, timepoint=tp, outcomes=outcomes,
            demographics=_demographics(first, chart_id), followup_months=first["followup_months"],
            country=first["country"], reported_chart=first["chart"], icc=first["icc"],
            design_effect=de, cluster_size=first["cluster_size"], flags=frozenset(flags),
            source_rows=tuple({k: v for k, v in p.items() if k != "line"} for p in rows)))
    return records


def _outcome(p, design_effect):
    sd = p["sd"] if design_effect is None else unadjust_sd(p["sd"], design_effect)
    try:
        return AggregateOutcome(p["scale"], p["mean"], sd, p["n"])
    except DomainError as exc:
        raise RecordParseError(str(exc), p["line"]) from None


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_records(records, stream=None) -> str:
    """Write records back as CSV with percentiles on the unit scale.

    ``load_records(serialize_records(recs), "unit")`` reproduces ``recs``.
    """
    buf = io.StringIO()
    columns = RECORD_COLUMNS + EXTRA_COLUMNS
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        if not rec.source_rows:
            raise ValidationError(f"record {rec.key} has no source rows to serialize")
        for row in rec.source_rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text
