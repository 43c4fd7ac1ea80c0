"""Convert upstream LMS reference tables into the five-column chart CSV format.

Usage:
    python scripts/build_charts.py cdc upstream/cdc_bmiage.csv src/bmimap/charts/cdc.csv
    python scripts/build_charts.py who upstream/who_2007_bmi.json src/bmimap/charts/who.csv
    python scripts/build_charts.py iotf path/to/iotf_lms.csv src/bmimap/charts/iotf.csv

Upstream formats:
    cdc   CDC ``bmiagerev``-style CSV: Sex (1=male, 2=female), Agemos, L, M, S, ...
    who   JSON with ``bmi.male`` / ``bmi.female`` lists of {decimal_age, L, M, S}
    iotf  CSV with columns age_years, L_boys, M_boys, S_boys, L_girls, M_girls, S_girls
"""

import argparse
import csv
import json
import sys

HEADER = ["sex", "age_months", "lambda", "mu", "sigma"]


def _months_from_years(years):
    months = round(float(years) * 12.0, 4)
    return repr(int(months)) if months == int(months) else repr(months)


def convert_cdc(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            sex = {"1": "M", "2": "F"}[rec["Sex"].strip()]
            rows.append([sex, rec["Agemos"].strip(), rec["L"].strip(), rec["M"].strip(), rec["S"].strip()])
    return rows


def convert_who(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    rows = []
    for key, sex in (("male", "M"), ("female", "F")):
        for e in data["bmi"][key]:
            rows.append([sex, _months_from_years(e["decimal_age"]), repr(e["L"]), repr(e["M"]), repr(e["S"])])
    return rows


def convert_iotf(path):
    rows = {"M": [], "F": []}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            age = _months_from_years(rec["age_years"])
            for suffix, sex in (("boys", "M"), ("girls", "F")):
                rows[sex].append([sex, age, rec[f"L_{suffix}"].strip(),
                                  rec[f"M_{suffix}"].strip(), rec[f"S_{suffix}"].strip()])
    return rows["M"] + rows["F"]


CONVERTERS = {"cdc": convert_cdc, "who": convert_who, "iotf": convert_iotf}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("kind", choices=sorted(CONVERTERS))
    ap.add_argument("source")
    ap.add_argument("dest")
    args = ap.parse_args(argv)
    rows = CONVERTERS[args.kind](args.source)
    with open(args.dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.dest}", file=sys.stderr)


if __name__ == "__main__":
    main()
