import numpy as np
import pytest

from nrrd import Grid, Params, find_positive_steady, robin_eigenpair

# continuous steady state of the reference problem on (0, 1), from
# scipy.integrate.solve_bvp at tol 1e-9 (see test_steady.py for the live solve)
BVP_U1 = {0.0: 3.882993336836, 0.25: 4.662576493425, 0.5: 4.947248091244}
BVP_U2 = {0.0: 2.289724555485, 0.25: 2.731625760762, 0.5: 2.884723760877}


@pytest.fixture(scope="session")
def ref_params():
    return Params(a=1.0, b=1.0, alpha=1.0, beta=1.0, gamma=2.0)


@pytest.fixture(scope="session")
def grid101():
    return Grid.interval(101)


@pytest.fixture(scope="session")
def ref_steady(grid101, ref_params):
    return find_positive_steady(grid101, ref_params)


@pytest.fixture(scope="session")
def ubar(ref_steady):
    return ref_steady.state


@pytest.fixture(scope="session")
def eigen_l1(grid101):
    return robin_eigenpair(grid101, 1.0, "L1_unit")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
