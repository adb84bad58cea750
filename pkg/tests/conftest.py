from datetime import datetime, timezone

import numpy as np
import pytest

from scalocast.series import HourlySeries, Unit
from scalocast import synth

T0 = datetime(2019, 1, 1, tzinfo=timezone.utc)


def hourly(values, start=T0, unit=Unit.KWH, mask=None, name="x"):
    return HourlySeries(start, np.asarray(values, dtype=float), unit, mask, name)


@pytest.fixture(scope="session")
def synth3():
    """Three years of synthetic data (2016-2018), seed 0."""
    return synth.generate(synth.SynthConfig(seed=0, years=3))


@pytest.fixture(scope="session")
def synth4():
    """Four years of synthetic data (2016-2019), seed 0."""
    return synth.generate(synth.SynthConfig(seed=0, years=4))


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
