import numpy as np
import pytest

from sadcl.numeric import precision


@pytest.fixture
def high():
    """Run the test body in float64."""
    with precision("high"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
