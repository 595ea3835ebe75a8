import warnings

import numpy as np
import pytest

from egoradar.config import AdcWindowWarning, preset

warnings.simplefilter("ignore", AdcWindowWarning)


@pytest.fixture(scope="session")
def sim_cfg():
    return preset("paper_sim")


@pytest.fixture(scope="session")
def amb_cfg():
    return preset("paper_sim_ambiguous")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def static_geometry(velocity, azimuths_deg, elevations_deg):
    """Exact (doppler, az, el) of static scatterers seen from ``velocity``."""
    az, el = np.meshgrid(np.deg2rad(azimuths_deg), np.deg2rad(elevations_deg), indexing="ij")
    az, el = az.ravel(), el.ravel()
    d = np.stack([np.sin(az) * np.cos(el), np.cos(az) * np.cos(el), np.sin(el)], axis=1)
    return -d @ np.asarray(velocity, float), az, el


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
