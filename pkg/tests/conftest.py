import pytest

from tests.helpers import Chain


@pytest.fixture
def chain():
    return Chain().setup()


@pytest.fixture
def fresh_chain():
    return Chain()
