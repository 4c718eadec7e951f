import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from delta_metrology.core import BeamConfig, DetectorConfig
from delta_metrology.xrf.presets import device_beam, device_detector, device_templates

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def detector() -> DetectorConfig:
    return device_detector()


@pytest.fixture(scope="session")
def beam() -> BeamConfig:
    return device_beam(1)


@pytest.fixture(scope="session")
def templates():
    return device_templates()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
