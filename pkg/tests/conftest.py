import numpy as np
import pytest

from rftomo.model import NVParams, nv_system
from rftomo.quantum import pauli_basis


@pytest.fixture(scope="session")
def nv():
    return nv_system(NVParams.published())


@pytest.fixture(scope="session")
def basis2():
    return pauli_basis(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
