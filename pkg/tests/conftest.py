import json
from pathlib import Path

import pytest

from bmimap.charts import load_bundled

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())

RECORD_HEADER = ("trial_id,arm_id,timepoint,followup_months,scale,mean,sd,n,mean_age,sd_age,age_unit,"
                 "prop_male,country,chart,icc,design_effect,cluster_size,change_score")


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(scope="session")
def cdc():
    return load_bundled("cdc")


@pytest.fixture(scope="session")
def who():
    return load_bundled("who")


def records_csv(*rows, header=RECORD_HEADER):
    return "\n".join((header,) + rows) + "\n"


# One line per acceptance criterion, printed at the end of the run.
ACCEPTANCE_LINES = {}


def report(criterion, passed, detail):
    if isinstance(passed, str):
        status, passed = passed, False
    else:
        passed = bool(passed)
        status = "PASS" if passed else "FAIL"
    line = f"criterion {criterion:>2}: {status}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
