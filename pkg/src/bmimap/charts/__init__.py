"""LMS reference charts: loading, validation and nearest-age lookup.

Chart files are CSV with header ``sex,age_months,lambda,mu,sigma`` (sex is
``M`` or ``F``).  A header using ``age_years`` instead of ``age_months`` is
accepted and converted to months at load.  The bundled CDC and WHO charts
live next to this module; see ``PROVENANCE.md``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import AgeRangeError, ChartError, ChartParseError, DomainError

SEXES = ("M", "F")
BUNDLED_CHARTS = ("cdc", "who", "iotf")
_COLUMNS = ("sex", "age_months", "lambda", "mu", "sigma")
_AGE_EPS = 1e-9

US_COUNTRY_NAMES = {"us", "usa", "u.s.", "u.s.a.", "united states", "united states of america"}


def normalize_sex(value) -> str:
    """Map male/female spellings (M, F, male, 1, 0, ...) to ``'M'`` / ``'F'``."""
    if isinstance(value, (bool, np.bool_)):
        return "M" if value else "F"
    s = str(value).strip().lower()
    if s in ("m", "male", "1", "boy", "boys"):
        return "M"
    if s in ("f", "female", "0", "2", "girl", "girls"):
        return "F"
    raise DomainError(f"unrecognised sex value {value!r}")


@dataclass(frozen=True)
class LmsEntry:
    sex: str
    age_months: float
    lam: float
    mu: float
    sigma: float


@dataclass(frozen=True, eq=False)
class LmsChart:
    """Immutable table of LMS parameters, stored per sex as sorted arrays."""

    id: str
    ages: dict = field(repr=False)       # sex -> ndarray of ages (months), strictly increasing
    params: dict = field(repr=False)     # sex -> ndarray shape (n, 3) of (lambda, mu, sigma)
    step_months: float = 1.0
    checksum: str = ""

    @property
    def age_min_months(self) -> float:
        return max(float(self.ages[s][0]) for s in SEXES)

    @property
    def age_max_months(self) -> float:
        return min(float(self.ages[s][-1]) for s in SEXES)

    def entries(self, sex=None):
        sexes = SEXES if sex is None else (normalize_sex(sex),)
        for s in sexes:
            for age, (lam, mu, sig) in zip(self.ages[s], self.params[s]):
                yield LmsEntry(s, float(age), float(lam), float(mu), float(sig))

    def __len__(self):
        return sum(len(self.ages[s]) for s in SEXES)

    def __eq__(self, other):
        if not isinstance(other, LmsChart):
            return NotImplemented
        return (self.id == other.id and self.step_months == other.step_months
                and all(np.array_equal(self.ages[s], other.ages[s])
                        and np.array_equal(self.params[s], other.params[s]) for s in SEXES))

    def __hash__(self):
        return hash((self.id, self.checksum))

    def in_range(self, age_months):
        a = np.asarray(age_months, dtype=float)
        return (a >= self.age_min_months - _AGE_EPS) & (a <= self.age_max_months + _AGE_EPS)

    def lookup(self, age_months: float, sex) -> tuple[float, float, float]:
        """(lambda, mu, sigma) at the tabulated age nearest ``age_months``.

        Exact midpoints go to the larger age.
        """
        s = normalize_sex(sex)
        age = float(age_months)
        if not math.isfinite(age) or not self.in_range(age):
            raise AgeRangeError(
                f"age {age} months outside chart {self.id!r} range "
                f"[{self.age_min_months}, {self.age_max_months}]")
        idx = _nearest_index(self.ages[s], np.array([age]))[0]
        lam, mu, sig = self.params[s][idx]
        return float(lam), float(mu), float(sig)

    def lookup_many(self, ages_months, is_male):
        """Vectorised :meth:`lookup`; returns three arrays (lambda, mu, sigma)."""
        ages = np.asarray(ages_months, dtype=float)
        male = np.asarray(is_male, dtype=bool)
        if ages.shape != male.shape:
            raise ValueError("ages and sexes must have the same shape")
        if not np.all(self.in_range(ages)):
            bad = ages[~self.in_range(ages)]
            raise AgeRangeError(f"{bad.size} ages outside chart {self.id!r} range, e.g. {bad.flat[0]}")
        out = np.empty(ages.shape + (3,))
        for s, mask in (("M", male), ("F", ~male)):
            if np.any(mask):
                idx = _nearest_index(self.ages[s], ages[mask])
                out[mask] = self.params[s][idx]
        return out[..., 0], out[..., 1], out[..., 2]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_COLUMNS)
        for e in self.entries():
            w.writerow([e.sex, repr(e.age_months), repr(e.lam), repr(e.mu), repr(e.sigma)])
        return buf.getvalue()


def _nearest_index(grid, ages):
    # `<=` sends exact midpoints to the upper neighbour.
    i = np.searchsorted(grid, ages, side="left")
    i = np.clip(i, 1, len(grid) - 1)
    lo, hi = grid[i - 1], grid[i]
    take_hi = (hi - ages) <= (ages - lo)
    idx = np.where(take_hi, i, i - 1)
    if len(grid) == 1:
        idx = np.zeros_like(idx)
    return idx


def load_chart(source, id: str, strict_lambda: bool = False) -> LmsChart:
    """Parse and validate a chart CSV.

    ``source`` may be a path, bytes, text, or a binary/text stream.  With
    ``strict_lambda`` every entry must have lambda < 0.
    """
    raw = _read_bytes(source)
    checksum = hashlib.sha256(raw).hexdigest()
    text = raw.decode("utf-8-sig")
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise ChartParseError("empty chart file", line=1) from None
    if header == ["sex", "age_years", "lambda", "mu", "sigma"]:
        age_scale = 12.0
    elif header == list(_COLUMNS):
        age_scale = 1.0
    else:
        raise ChartParseError(f"expected header {','.join(_COLUMNS)}, got {','.join(header)}", line=1)

    by_sex: dict[str, list] = {"M": [], "F": []}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise ChartParseError(f"expected 5 fields, got {len(row)}", line=lineno)
        try:
            sex = normalize_sex(row[0])
        except DomainError as exc:
            raise ChartParseError(str(exc), line=lineno) from None
        try:
            age, lam, mu, sig = (float(c) for c in row[1:])
        except ValueError:
            raise ChartParseError(f"non-numeric value in {row!r}", line=lineno) from None
        age *= age_scale
        if not all(math.isfinite(v) for v in (age, lam, mu, sig)):
            raise ChartParseError("non-finite value", line=lineno)
        if age < 0:
            raise ChartParseError(f"negative age {age}", line=lineno)
        if mu <= 0:
            raise ChartParseError(f"mu must be > 0, got {mu}", line=lineno)
        if sig <= 0:
            raise ChartParseError(f"sigma must be > 0, got {sig}", line=lineno)
        if strict_lambda and lam >= 0:
            raise ChartParseError(f"lambda must be < 0, got {lam}", line=lineno)
        entries = by_sex[sex]
        if entries and age <= entries[-1][0]:
            what = "duplicate" if age == entries[-1][0] else "non-increasing"
            raise ChartParseError(f"{what} age {age} for sex {sex}", line=lineno)
        entries.append((age, lam, mu, sig, lineno))

    for s in SEXES:
        if not by_sex[s]:
            raise ChartParseError(f"missing sex stratum {s!r}")

    step = _declared_step(by_sex)
    for s in SEXES:
        rows = by_sex[s]
        for prev, cur in zip(rows, rows[1:]):
            if cur[0] - prev[0] > step + 1e-6:
                raise ChartParseError(
                    f"gap in ages for sex {s}: {prev[0]} -> {cur[0]} exceeds step {step}", line=cur[4])

    ages = {s: np.array([r[0] for r in by_sex[s]]) for s in SEXES}
    params = {s: np.array([r[1:4] for r in by_sex[s]]) for s in SEXES}
    for s in SEXES:
        ages[s].setflags(write=False)
        params[s].setflags(write=False)
    return LmsChart(id=id, ages=ages, params=params, step_months=step, checksum=checksum)


def _declared_step(by_sex) -> float:
    """Most common spacing between consecutive tabulated ages.

    CDC tabulates at month midpoints with half-month end rows (24, 24.5,
    25.5, ...), so smaller gaps are allowed and only larger ones rejected.
    """
    gaps = Counter()
    for rows in by_sex.values():
        for prev, cur in zip(rows, rows[1:]):
            gaps[round(cur[0] - prev[0], 6)] += 1
    if not gaps:
        return 0.0
    best = max(gaps.values())
    return max(g for g, c in gaps.items() if c == best)


def _read_bytes(source) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, Path):
        return source.read_bytes()
    if isinstance(source, str):
        if "\n" in source or "," in source:
            return source.encode("utf-8")
        return Path(source).read_bytes()
    data = source.read()
    return data.encode("utf-8") if isinstance(data, str) else data


def z_upper_bound(lam: float, sigma: float) -> float:
    """Largest z with a valid BMI back-transform, -1/(lambda*sigma), for lambda < 0."""
    if lam >= 0:
        raise DomainError(f"z upper bound needs lambda < 0, got {lam}")
    if sigma <= 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    return -1.0 / (lam * sigma)


def min_z_bound(chart: LmsChart):
    """Minimum z upper bound over all entries: ``(bound, (sex, age_months))``."""
    best = None
    for e in chart.entries():
        if e.lam >= 0:
            raise DomainError(f"chart {chart.id!r} has lambda >= 0 at ({e.sex}, {e.age_months})")
        b = z_upper_bound(e.lam, e.sigma)
        if best is None or b < best[0]:
            best = (b, (e.sex, e.age_months))
    return best


def bundled_chart_path(chart_id: str):
    return resources.files(__name__).joinpath(f"{chart_id}.csv")


def available_bundled() -> list[str]:
    return [c for c in BUNDLED_CHARTS if bundled_chart_path(c).is_file()]


def load_bundled(chart_id: str) -> LmsChart:
    path = bundled_chart_path(chart_id)
    if not path.is_file():
        raise ChartError(
            f"chart {chart_id!r} is not bundled; supply {chart_id}.csv in a chart directory")
    return load_chart(path.read_bytes(), chart_id)


class ChartRegistry:
    """Chart lookup by id, from a directory with bundled charts as fallback.

    Charts are loaded lazily and cached; the instance is read-only afterwards.
    """

    def __init__(self, directory=None, use_bundled: bool = True):
        self.directory = Path(directory) if directory is not None else None
        self.use_bundled = use_bundled
        self._cache: dict[str, LmsChart] = {}

    def path_for(self, chart_id: str):
        chart_id = chart_id.lower()
        if self.directory is not None:
            p = self.directory / f"{chart_id}.csv"
            if p.is_file():
                return p
        if self.use_bundled and bundled_chart_path(chart_id).is_file():
            return bundled_chart_path(chart_id)
        return None

    def get(self, chart_id: str) -> LmsChart:
        chart_id = chart_id.lower()
        if chart_id not in self._cache:
            path = self.path_for(chart_id)
            if path is None:
                where = f" in {self.directory}" if self.directory else ""
                raise ChartError(f"no chart file for {chart_id!r}{where}")
            self._cache[chart_id] = load_chart(path.read_bytes(), chart_id)
        return self._cache[chart_id]

    def checksums(self, ids) -> dict:
        return {c: self.get(c).checksum for c in sorted(set(i.lower() for i in ids))}


def default_chart_for_country(country) -> str:
    """CDC for US trials, IOTF for every other (or unknown) country."""
    if country is not None and str(country).strip().lower() in US_COUNTRY_NAMES:
        return "cdc"
    return "iotf"
