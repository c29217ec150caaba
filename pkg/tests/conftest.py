from typing import Iterator

import pytest

from dsac.credential import KeyPair
from tests.utils import DataSpace, FakeClock, start_data_space


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def pap_key() -> KeyPair:
    return KeyPair.generate()


@pytest.fixture
def idp_key() -> KeyPair:
    return KeyPair.generate()


@pytest.fixture
def holder_key() -> KeyPair:
    return KeyPair.generate()


@pytest.fixture
def data_space() -> Iterator[DataSpace]:
    space = start_data_space()
    yield space
    space.stop()
