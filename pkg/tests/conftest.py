import numpy as np
import pytest

from lakecause.core import N_DAYS, OBSERVED_VARIABLES, Dataset, LakeRecord
from lakecause.synth import SynthConfig, generate


def make_lake(lake_id="L0", region="CW", label="refreeze", year=2019, series=None, seed=0):
    if series is None:
        series = np.random.default_rng(seed).normal(size=(N_DAYS, len(OBSERVED_VARIABLES)))
    return LakeRecord(lake_id, region, year, label, 1000.0, 1200.5, series)


@pytest.fixture(scope="session")
def small_synth():
    """72 synthetic lakes: 3 per class in each of the six regions."""
    ds, truth = generate(SynthConfig(n_lakes_per_class_per_region=3, seed=11))
    return ds, truth


@pytest.fixture
def ten_lakes(small_synth):
    ds, _ = small_synth
    return Dataset(ds.lakes[:10])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
