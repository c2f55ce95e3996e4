import numpy as np
import pytest

from manl import DomainPair


@pytest.fixture(scope="session")
def domain1():
    return DomainPair(d=1)


@pytest.fixture(scope="session")
def domain2():
    return DomainPair(d=2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260826)
