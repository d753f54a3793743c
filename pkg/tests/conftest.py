import numpy as np
import pytest

from p2hopt.costs import CostParams
from p2hopt.exogenous import OUParams, SeasonalityParams
from p2hopt.physical import PowerCurve, SystemParams


@pytest.fixture(scope="session")
def params():
    return SystemParams()


@pytest.fixture(scope="session")
def curve():
    return PowerCurve()


@pytest.fixture(scope="session")
def ou():
    return OUParams()


@pytest.fixture(scope="session")
def seas():
    return SeasonalityParams()


@pytest.fixture(scope="session")
def flat_seas():
    """Constant trends: exp(1.4) m/s wind level, 38 EUR/MWh price level."""
    return SeasonalityParams(
        wind_yearly_amp=0.0, wind_daily_amp=0.0,
        price_yearly_amp=0.0, price_daily_amp=0.0, price_halfdaily_amp=0.0)


@pytest.fixture(scope="session")
def cost_params():
    return CostParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
