import numpy as np
import pytest

from fda_isac.array_model import ArrayConfig
from fda_isac.ccie import CcieConfig
from fda_isac.constants import FODC_OFFSETS, LINEAR_OFFSETS
from fda_isac.scene import Scene, Target

WAVELENGTH = 3e8 / 10e9

THREE_TARGETS = (
    Target(40.9, 10.55, 8.62),
    Target(89.6, 10.55, 20.42),
    Target(115.9, 32.01, 36.5),
)


@pytest.fixture
def fodc_cfg():
    return ArrayConfig(offsets=FODC_OFFSETS)


@pytest.fixture
def lfo_cfg():
    return ArrayConfig(offsets=LINEAR_OFFSETS)


@pytest.fixture
def unit_ccie():
    return CcieConfig(np.exp(1j * np.pi * np.arange(4) / 8), 4)


@pytest.fixture
def three_scene():
    return Scene(THREE_TARGETS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
