import warnings

import pytest

from katoklab import KatokMap, preset_params
from katoklab import engine as eng


@pytest.fixture(scope="session")
def pressure_map():
    # default working point; epsilon is deliberately coarse here, silence the advisory
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        params = preset_params("pressure")
    return KatokMap(params)


@pytest.fixture(scope="session")
def product_map():
    return KatokMap(preset_params("product"))


@pytest.fixture(scope="session")
def ctx(pressure_map):
    return eng.make_ctx(pressure_map)
