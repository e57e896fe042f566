import numpy as np
import pytest

from mrdmix import (CovariateSettings, McmcConfig, PatientRecord,
                    default_truth, fit, simulate_dataset)

_ACCEPTANCE_LINES = []


def acceptance_note(line):
    """Record a measured acceptance result for the terminal summary."""
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance measurements")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_record(i, mrd1=0.5, mrd2=0.05, subtype="ETV6-RUNX1",
                protocol="T16", lc50=(0.1, -0.2, 0.3, -0.4, 0.5), age=8.0,
                gender="F", wbc=15.0):
    return PatientRecord(id=f"p{i:03d}", age=age, gender=gender, wbc=wbc,
                         subtype=subtype, protocol=protocol, mrd1=mrd1,
                         mrd2=mrd2, lc50=tuple(lc50))


@pytest.fixture(scope="session")
def sim60():
    settings = CovariateSettings(n=60)
    p = 3 + 2 + (len(settings.subtype_freqs) - 1)
    truth = default_truth(p)
    return simulate_dataset(truth, settings, 7, strict_monotone=True)


@pytest.fixture(scope="session")
def small_store(sim60):
    cfg = McmcConfig(iterations=240, burn_in=80, thin=2, chains=2, seed=5)
    return fit(sim60.records, cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
