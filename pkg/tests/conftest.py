import pytest

from ammauction.market import MarketParams

# Reference parameterization used across the suite: sigma per sqrt(day),
# delta_t in days, r per day.
REF = MarketParams(
    sigma=0.05, delta_t=0.01, r=1e-4, f_max=0.05, c0=25.0, c1=120.0, alpha=0.5
)


@pytest.fixture
def ref_params() -> MarketParams:
    return REF
