import numpy as np
import pytest

from evcap.distributions import UserPopulation, make_point, make_uniform
from evcap.dsl import DslFacility
from evcap.pd import QuadraticPricing

CASE_RATES = (15.0, 25.0, 35.0, 45.0)
CASE_PRICES = (0.20, 0.22, 0.24, 0.26)


def case_population(dwell=None, arrival_rate=20.0):
    return UserPopulation(
        arrival_rate,
        make_uniform(10.0, 100.0),
        make_uniform(0.0, 10.0),
        make_uniform(0.0, 3.5) if dwell is None else dwell,
    )


@pytest.fixture
def population():
    return case_population()


@pytest.fixture
def fp_population():
    return case_population(dwell=make_point(0.0))


@pytest.fixture
def menu():
    return DslFacility.from_menu(CASE_RATES, CASE_PRICES, 0.0)


def metered_menu(fee):
    return DslFacility.from_menu(CASE_RATES, CASE_PRICES, fee)


@pytest.fixture
def pricing():
    return QuadraticPricing(2.0, 0.25, 4.0, 50.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed as one line per criterion after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
