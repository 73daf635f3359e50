import numpy as np
import pytest

from mimo_scatter import checks
from mimo_scatter.scene import Frequency


@pytest.fixture(scope="session")
def freq():
    return Frequency.from_hz(3e8)


@pytest.fixture(scope="session")
def desk():
    """Two antennas and two scatterers on a coarse lattice."""
    return checks.desk_scene(count=60)


@pytest.fixture(scope="session")
def free_scene():
    return checks.desk_scene(scatterers=False, count=60)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
