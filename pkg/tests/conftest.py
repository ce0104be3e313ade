import numpy as np
import pytest

from loopcool import presets


@pytest.fixture(scope="session")
def experiment():
    return presets.experiment()


@pytest.fixture(scope="session")
def experiment_empty():
    return presets.experiment_empty()


@pytest.fixture(scope="session")
def fig1_optical():
    return presets.fig1_optical()


@pytest.fixture(scope="session")
def fig1_microwave():
    return presets.fig1_microwave()


@pytest.fixture
def rng():
    return np.random.RandomState(20240811)
