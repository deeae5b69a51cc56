import numpy as np
import pytest
from hypothesis import settings, strategies as st

from expanse.flows import (BernoulliSymbols, FlowSystem, PeriodicSymbols, SuspensionPoint,
                           TorusPoint)

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

HALF = (0.5, 0.5)


@pytest.fixture(scope="session")
def torus():
    return FlowSystem.torus()


@pytest.fixture(scope="session")
def susp():
    return FlowSystem.suspension(2)


def bern_point(seed, roof=0.0, offset=0, probs=HALF):
    return SuspensionPoint(BernoulliSymbols(seed, probs), offset, roof)


def const_point(symbol, roof=0.0):
    return SuspensionPoint(PeriodicSymbols((symbol,)), 0, roof)


unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)
torus_points = st.builds(TorusPoint, unit, unit)
susp_points = st.builds(bern_point, st.integers(0, 2 ** 32), unit, st.integers(-50, 50))


# acceptance criteria report one line each at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
