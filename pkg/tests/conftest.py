import pytest

from aircap.calibration import calibrate_airport
from aircap.data_io import SyntheticAirportSpec, generate_synthetic
from aircap.model import SIGN_SWAPPED_COEFFS

FLAT_TRAFFIC = (20, 28, 34, 36, 35, 34, 33, 33, 34, 35, 36, 36, 35, 34, 34, 32, 28, 22)
SWAPPED = (SIGN_SWAPPED_COEFFS.a1, SIGN_SWAPPED_COEFFS.a2, SIGN_SWAPPED_COEFFS.b1, SIGN_SWAPPED_COEFFS.b2)

ACCEPTANCE_LINES = []


def flat_spec(**kw):
    base = dict(traffic=FLAT_TRAFFIC, C=250.0, cc=1.04, coeffs=SWAPPED, days=30, name="flat")
    base.update(kw)
    return SyntheticAirportSpec(**base)


@pytest.fixture(scope="session")
def flat_synth():
    return generate_synthetic(flat_spec())


@pytest.fixture(scope="session")
def flat_model(flat_synth):
    return calibrate_airport(flat_synth.financials, flat_synth.records, 500.0, SIGN_SWAPPED_COEFFS, name="flat")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
