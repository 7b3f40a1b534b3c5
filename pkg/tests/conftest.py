import warnings

import pytest

from pamlab.lattice import Box
from pamlab.potentials import PotentialSpec


@pytest.fixture(scope="session")
def dexp2():
    return PotentialSpec.double_exponential(2.0)


@pytest.fixture(scope="session")
def box1d():
    return Box(1, 8, "dirichlet")


@pytest.fixture(scope="session")
def client():
    """In-process HTTP client against a fresh app instance."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient
    from pamlab.service import create_app
    with TestClient(create_app()) as c:
        yield c
