import numpy as np
import pytest

from rotorstack.plant import PlantModel
from rotorstack.platforms import load_profiles


@pytest.fixture(scope="session")
def registry():
    return load_profiles()


@pytest.fixture(scope="session")
def x500(registry):
    return registry.get("X500")


@pytest.fixture(scope="session")
def x500_model(x500):
    return PlantModel(x500)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
