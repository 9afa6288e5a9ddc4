import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from exosquat import _backend
from exosquat.default_model import default_exo_spec
from exosquat.multibody import build_model

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = _backend.available()


@pytest.fixture(scope="session")
def exo_spec():
    return default_exo_spec()


@pytest.fixture(scope="session")
def model(exo_spec):
    return build_model(exo_spec)


@pytest.fixture(scope="session", params=BACKENDS)
def any_model(request, exo_spec):
    return build_model(exo_spec, backend=request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
