import pytest

from stairslab.sampling import RngHandle


@pytest.fixture
def rng():
    return RngHandle(20240517)
