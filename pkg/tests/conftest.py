import pytest

from fvss import P_DEFAULT, init_participants

SEED = bytes(range(32))


@pytest.fixture(scope="session")
def km_toy():
    """Small prime keeps failure cases readable and brute force cheap."""
    return init_participants(5, 4, seed=SEED, p=251)


@pytest.fixture(scope="session")
def km_big():
    return init_participants(5, 4, seed=SEED, p=P_DEFAULT)
