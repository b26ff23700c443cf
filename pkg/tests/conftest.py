import numpy as np
import pytest

from fdin.autodiff import set_precision


@pytest.fixture(autouse=True)
def _float64():
    set_precision("float64")
    yield
    set_precision("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
