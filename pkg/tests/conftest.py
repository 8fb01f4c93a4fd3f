import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "renvol",
    deadline=None,
    max_examples=int(os.environ.get("RENVOL_HYPOTHESIS_EXAMPLES", "25")),
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("renvol")


@pytest.fixture(scope="session")
def torus2():
    from renvol.chart_geometry import ChartMetric

    return ChartMetric.random(2, 32, seed=3, amplitude=0.1, max_mode=2)


@pytest.fixture(scope="session")
def torus4():
    from renvol.chart_geometry import ChartMetric

    return ChartMetric.random(4, 8, seed=5, amplitude=0.03, max_mode=1)


@pytest.fixture(scope="session")
def fg12():
    """Order-4 expansion on a 12^4 chart, fine enough for fourth-derivative identities."""
    from renvol.chart_geometry import ChartMetric
    from renvol.fg_expansion import solve_fg

    return solve_fg(ChartMetric.random(4, 12, seed=5, amplitude=0.03, max_mode=1), order=4)
