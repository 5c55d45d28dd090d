import json
from pathlib import Path

import numpy as np
import pytest

from gridlab.env.env import GridSimEnv
from gridlab.env.profiles import TimeSeries, make_profiles
from gridlab.grid.case import case_from_dict, load_case

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def six_bus():
    return load_case("six_bus")


@pytest.fixture(scope="session")
def six_bus_series(six_bus):
    return make_profiles(six_bus, seed=0, days=3)


@pytest.fixture
def env(six_bus, six_bus_series):
    return GridSimEnv(six_bus, six_bus_series)


@pytest.fixture(scope="session")
def reference_solution():
    return json.loads((FIXTURES / "six_bus_reference.json").read_text())


def case_dict(name="six_bus"):
    return load_case(name).to_dict()


def flat_series(case, steps=300, load_scale=1.0, ren_frac=0.5):
    """Constant loads at base values and constant renewable ceilings."""
    load_p = np.repeat(case.load_array("base_p")[:, None] * load_scale, steps, axis=1)
    load_q = np.repeat(case.load_array("base_q")[:, None] * load_scale, steps, axis=1)
    cap = case.gen_array("p_max")[case.renewable_ids]
    ren = np.repeat(cap[:, None] * ren_frac, steps, axis=1)
    return TimeSeries(load_p, load_q, ren)


def modified_case(name="six_bus", gens=None, lines=None):
    """Bundled case with per-generator / per-line field overrides ({index: {field: value}})."""
    d = case_dict(name)
    for i, fields in (gens or {}).items():
        d["generators"][i].update(fields)
    for i, fields in (lines or {}).items():
        d["lines"][i].update(fields)
    return case_from_dict(d, name=name)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    line = f"criterion {number:>2}: {status}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
